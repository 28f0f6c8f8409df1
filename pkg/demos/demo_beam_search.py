"""Why beam search: a two-step toy distribution where greedy decoding loses.

Run:  python3 demos/demo_beam_search.py
"""

import numpy as np

from roomwalk import sampler as sp

# token 0 looks best at step one (p = 0.5), but its continuations are split;
# token 1 (p = 0.3) leads to a confident second step.
tables = {
    (): np.log(np.array([0.50, 0.30, 0.20])),
    (0,): np.log(np.array([0.50, 0.50, 1e-9])),
    (1,): np.log(np.array([0.90, 0.05, 0.05])),
    (2,): np.log(np.array([0.34, 0.33, 0.33])),
}


def step_fn(partials):
    return np.stack([tables[tuple(int(t) for t in row)] for row in partials])


for k in (1, 2, 3):
    best, steps = sp.beam_search_frame(step_fn, hw=2, k=k, return_beams=True)
    print(f"k={k}: tokens {best.tokens}  joint prob {np.exp(best.score):.3f}")
    for i, beams in enumerate(steps):
        frontier = ", ".join(f"{b.tokens}@{np.exp(b.score):.3f}" for b in beams)
        print(f"    after step {i + 1}: {frontier}")

print("\ngreedy picks 0 then splits 50/50 (joint 0.25);")
print("a width-2 beam keeps token 1 alive and finds (1, 0) at 0.27.")
