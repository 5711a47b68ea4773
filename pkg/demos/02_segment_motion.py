"""Compare the three motion segmenters against known boundaries.

Builds a corpus whose regime boundaries are jittered away from the uniform
positions, then scores uniform splitting, kernel change-point detection,
and clustering-DP segmentation against the ground truth.  The content-aware
methods find boundaries more accurately; uniform has the tightest error
spread because it can never be more than the jitter away.
"""

from segalign.segmentation import (
    brute_force_segment,
    build_primitive_library,
    cluster_dp_segment,
    gaussian_kernel_matrix,
    jittered_boundary_corpus,
    kernel_cpd_segment,
    seg_error_corpus,
    uniform_segment,
)

corpus = jittered_boundary_corpus(seed=0, n_sequences=200)
print(f"corpus: {len(corpus)} sequences of {corpus[0][0].length} tokens")

lib = build_primitive_library(
    [x for x, _ in corpus[:100]],
    window_size=1, stride=1, num_primitives=16, seed=0, iters=10,
)
print(f"primitive library: {lib.size} centers")

methods = {
    "uniform": lambda x, a: uniform_segment(x.length, a),
    "kernel CPD": lambda x, a: kernel_cpd_segment(x, a),
    "clustering": lambda x, a: cluster_dp_segment(x, lib, a),
}

print(f"\n{'method':<12} {'mean error':>10} {'std error':>10}")
for name, segment in methods.items():
    pairs = [(segment(x, truth.num_segments), truth) for x, truth in corpus]
    mean, std = seg_error_corpus(pairs)
    print(f"{name:<12} {mean:>10.3f} {std:>10.3f}")

# the DP solution is exactly the exhaustive optimum on small instances
x, truth = corpus[0]
small = x.vectors[:12]
from segalign.motion import LatentSequence  # noqa: E402

xs = LatentSequence(vectors=small)
dp = kernel_cpd_segment(xs, 2)
oracle = brute_force_segment(gaussian_kernel_matrix(small), 2)
print(f"\nDP boundaries     {dp.spans}")
print(f"oracle boundaries {oracle.spans}")
assert dp == oracle
