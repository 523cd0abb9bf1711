"""Parameter counts from walking the layer shapes of the encoder and heads.

Independent of the C++ builder: it only knows the architecture description
(per stage one 3x3 conv per dilation rate, 1x1 fusion conv over the
concatenation, 2x2 average pooling; GAP or flatten; latent linear; two-layer
projection and regression MLPs).
"""

import json
from pathlib import Path


def conv(cin, cout, k):
    return cout * cin * k * k + cout


def linear(n_in, n_out):
    return n_in * n_out + n_out


def count(channels=3, size=64, stages=3, rates=(1, 2, 4), kernel=3, stage_channels=(16, 32, 64),
          pooling="gap", latent=128, proj_hidden=128, proj_dim=64, reg_hidden=64):
    total = {"encoder": 0, "projection": 0, "regressor": 0}
    cin = channels
    for s in range(stages):
        c = stage_channels[s]
        for _ in rates:
            total["encoder"] += conv(cin, c, kernel)
        total["encoder"] += conv(c * len(rates), c, 1)
        cin = c
        size //= 2
    pooled = cin if pooling == "gap" else cin * size * size
    total["encoder"] += linear(pooled, latent)
    total["projection"] = linear(latent, proj_hidden) + linear(proj_hidden, proj_dim)
    total["regressor"] = linear(latent, reg_hidden) + linear(reg_hidden, 2)
    total["total"] = sum(total.values())
    total["pooled_features"] = pooled
    return total


def main():
    out = {"gap": count(pooling="gap"), "flatten": count(pooling="flatten")}
    Path(__file__).with_name("param_count.json").write_text(json.dumps(out, indent=1) + "\n")


if __name__ == "__main__":
    main()
