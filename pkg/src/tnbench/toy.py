"""Synthetic SELFIES-style corpus and a deterministic stand-in property estimator.

Nothing here is chemistry. The corpus comes from a fixed first-order Markov
chain over bracket tokens, and the "properties" are smooth functions of token
counts plus hash-seeded jitter. They exist so the full pipeline, including
criteria filters on has_OH/BDE/IP and three-objective hypervolumes, can run
end to end without external estimators.
"""

from __future__ import annotations

import csv
import hashlib
import io
from typing import Iterable

import numpy as np

TOKENS = ("[C]", "[O]", "[N]", "[=C]", "[=O]", "[F]", "[Branch1]", "[Ring1]", "[#C]")


def toy_corpus(size: int = 300, max_len: int = 10, seed: int = 0) -> list[str]:
    """Distinct strings drawn from a random sparse Markov chain, in draw order."""
    rng = np.random.default_rng(seed)
    n = len(TOKENS)
    trans = rng.dirichlet(np.full(n, 0.3), size=n)
    start = rng.dirichlet(np.full(n, 0.5))
    seen: dict[str, None] = {}
    attempts = 0
    while len(seen) < size:
        attempts += 1
        if attempts > 200 * size:
            raise RuntimeError("could not draw enough distinct strings")
        length = int(rng.integers(3, max_len + 1))
        tok = rng.choice(n, p=start)
        toks = [tok]
        for _ in range(length - 1):
            tok = rng.choice(n, p=trans[tok])
            toks.append(tok)
        seen.setdefault("".join(TOKENS[t] for t in toks), None)
    return list(seen)


def _jitter(text: str, salt: str) -> float:
    """Deterministic pseudo-uniform value in [0, 1) from the string."""
    h = hashlib.blake2b(f"{salt}|{text}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "big") / 2.0 ** 64


def toy_properties(text: str) -> dict[str, float | bool]:
    counts = {t: text.count(t) for t in TOKENS}
    length = sum(counts.values())
    n_o = counts["[O]"]
    bde = 95.0 - 4.0 * n_o + 1.5 * counts["[C]"] - 2.0 * counts["[N]"] + 12.0 * (_jitter(text, "bde") - 0.5)
    ip = 165.0 + 4.0 * counts["[N]"] + 2.5 * counts["[=C]"] + 1.2 * length + 20.0 * (_jitter(text, "ip") - 0.5)
    sa = 1.0 + 0.5 * (counts["[Branch1]"] + counts["[Ring1]"]) + 0.2 * length + 1.5 * _jitter(text, "sa")
    qed = 1.0 / (1.0 + np.exp(-(1.5 - 0.25 * abs(length - 7) - 0.3 * counts["[F]"]))) * (0.8 + 0.2 * _jitter(text, "qed"))
    logp = 0.4 * counts["[C]"] - 0.7 * n_o - 0.5 * counts["[N]"] + 2.0 * (_jitter(text, "logp") - 0.5)
    return {"has_OH": n_o > 0, "BDE": bde, "IP": ip, "SA": sa, "QED": float(qed), "logP": logp}


def property_table_csv(texts: Iterable[str]) -> str:
    """CSV in the property-table layout for every distinct text, sorted."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "has_OH", "BDE", "IP", "SA", "QED", "logP"])
    for t in sorted(set(texts)):
        p = toy_properties(t)
        w.writerow([t, "true" if p["has_OH"] else "false",
                    *(repr(float(p[k])) for k in ("BDE", "IP", "SA", "QED", "logP"))])
    return buf.getvalue()
