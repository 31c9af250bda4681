"""
Caption metrics and head confidence intervals
=============================================

BLEU, ROUGE-L and CIDEr on a handful of reports, then the per-head
confidence intervals of a published head-statistics table.
"""

import numpy as np

from catrinet.metrics import EvalPair, bleu, cider, head_stats, rouge_l

refs = {
    "a": "the heart size is normal. the lungs are clear.",
    "b": "there is a nodule in the right upper lobe.",
    "c": "cardiomegaly is present. the lungs are clear.",
}
hyps = {
    "a": "the heart size is normal. the lungs are clear.",
    "b": "there is a nodule in the left upper lobe.",
    "c": "the heart size is normal. the lungs are clear.",
}
pairs = [EvalPair.from_text(k, hyps[k], [refs[k]]) for k in refs]
for n in range(1, 5):
    print(f"B-{n}  {100 * bleu(pairs, n):6.2f}")
print(f"ROUGE-L {100 * rouge_l(pairs):6.2f}")
print(f"CIDEr   {100 * cider(pairs):6.2f}")

# CI half-width = 1.96 * SD / sqrt(n); with n = 8 the published column
# follows from the published SDs
table = [(0.7500, 0.2812), (-0.0240, 0.0078), (0.0893, 0.0208), (0.0686, 0.0201),
         (0.0338, 0.0103), (-0.0484, 0.0133), (-0.0030, 0.0155), (-0.0516, 0.0236)]
obs = np.array([[m + s, m - s] * 4 for m, s in table]).T   # 8 observations per head
for s in head_stats(obs):
    print(f"head {s.head + 1}: mean {s.mean:+.4f} sd {s.sd:.4f} ci {s.ci_halfwidth:.4f}")
