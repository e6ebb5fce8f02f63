"""One eval-mode forward pass on a toy model, with a look at the attention maps."""

import numpy as np

from jointsan import tensor as T
from jointsan.answer import decode_span
from jointsan.gradcheck import toy_batch, toy_config, toy_model
from jointsan.model import forward

cfg = toy_config(d=8, steps=5)
params = toy_model(cfg, T.make_rng(0))
batch = toy_batch(T.make_rng(1), n=6, m=4)
print("trainable parameters:", params.num_parameters())

out = forward(params, batch, cfg, keep_trace=True)
trace = out.trace
for name in ("E_q", "E_p", "H_q", "H_p", "U", "U_hat", "M"):
    print(f"{name:6s} {trace[name].shape}")

np.set_printoptions(precision=3, suppress=True)
b = 1  # the shorter, unanswerable example
n = int(batch.null_index[b])
print("\nquestion summary weights alpha:", trace["alpha"].data[b])
print("passage-to-question weights C (rows sum to 1, padded question columns are 0):")
print(trace["C"].data[b, :n + 1])
print("self-attention diagonal:", np.diagonal(trace["self_attention"].data[b]))
print("memory summary weights gamma:", trace["gamma"].data[b])

print("\nP_begin averaged over", cfg.steps, "steps:", out.p_begin.data[b])
print("P_end:", out.p_end.data[b])
span = decode_span(out.p_begin.data[b, :n + 1], out.p_end.data[b, :n + 1], cfg.max_span_len)
print(f"decoded span ({span.begin}, {span.end}), score {span.span_score:.4f}, null={span.is_null}")
print(f"P(unanswerable) = {out.p_unanswerable.data[b]:.4f}")
