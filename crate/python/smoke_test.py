"""Smoke test for the fundus_cl extension module.

Build and install first:  pip install --no-build-isolation ./crates/python
"""

import math
import sys
import tempfile
from pathlib import Path

import fundus_cl


def check(name, ok):
    print(f"{'ok  ' if ok else 'FAIL'} {name}")
    return ok


def main():
    results = []

    # Identical rows: loss is ln(2N - 1).
    loss, grad = fundus_cl.nt_xent([0.5, 1.0, 1.5] * 4, 3, 0.5)
    results.append(check("nt_xent identical rows", abs(loss - math.log(3)) < 1e-9 and len(grad) == 12))

    content, style = [0.0, 2.0, 4.0, 6.0], [1.0, 1.0, 3.0, 3.0]
    out = fundus_cl.adain(content, style, 1, 2, 2)
    want = [(c - 3.0) / math.sqrt(5.0) + 2.0 for c in content]
    results.append(check("adain matches style statistics", all(abs(a - b) < 1e-9 for a, b in zip(out, want))))

    scores, labels = [0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]
    results.append(check("auc", abs(fundus_cl.auc(scores, labels) - 0.75) < 1e-12))
    roc = fundus_cl.roc_curve(scores, labels)
    results.append(check("roc starts at (0, 0) and ends at (1, 1)", roc[0][1:] == (0.0, 0.0) and roc[-1][1:] == (1.0, 1.0)))
    _, _, _, p = fundus_cl.delong(scores, scores, labels)
    results.append(check("delong on identical scores", p == 1.0))
    report = fundus_cl.evaluate(scores, labels, resamples=200, seed=1)
    lo, hi = report["auc"][1], report["auc"][2]
    results.append(check("evaluate interval brackets the AUC", lo <= report["auc"][0] <= hi))

    cfg = fundus_cl.RunConfig()
    digest = cfg.digest()
    cfg.seed = 7
    results.append(check("config digest tracks the seed", digest != cfg.digest() and fundus_cl.RunConfig(cfg.to_toml()).digest() == cfg.digest()))

    with tempfile.TemporaryDirectory() as tmp:
        manifest = fundus_cl.synthesize(tmp, n=20, image_size=32, seed=3)
        results.append(check("synthesize writes a manifest", Path(manifest).exists()))
        first = next(Path(tmp).rglob("*.png"))
        lum, sharp, clipped = fundus_cl.image_quality(str(first))
        results.append(check("image_quality", 0.0 <= lum <= 1.0 and sharp >= 0.0 and 0.0 <= clipped <= 1.0))

    if not all(results):
        sys.exit(1)
    print("all checks passed")


if __name__ == "__main__":
    main()
