"""From scores to trend clusters.

Each student's deviation scores on the retained tests become a trend vector:
the levels followed by every pairwise change. k-means groups the vectors and
each centroid is named by where it starts and ends relative to the mean of 50.

Run with ``python3 demos/02_trend_clusters.py``.
"""

# %%
import numpy as np

from longtrend.cohort_synth import SynthSpec, generate_cohort
from longtrend.screening import correlation_matrix, screen_tests
from longtrend.trend_clustering import (
    adjusted_rand_index,
    build_trend_vectors,
    diff_pairs,
    kmeans_restarts,
    label_clusters,
)

# %%
cohort = generate_cohort(SynthSpec(n_students=300, seed=11))
outcome = screen_tests(correlation_matrix(cohort.panel))
retained = list(outcome.retained)
print("retained tests:", [t.test_id for t in retained])

# %% [markdown]
# With m retained tests a trend vector has m levels and m(m-1)/2 changes.

# %%
vectors = build_trend_vectors(cohort.panel, retained)
print("change pairs:", diff_pairs(len(retained)))
v = vectors[0]
print(v.student_id, "levels", np.round(v.levels, 1), "changes", np.round(v.diffs, 1))

# %%
clustering = kmeans_restarts(vectors, k=4, seed=0, restarts=10)
labels = label_clusters(clustering, len(retained))
for j in range(clustering.k):
    size = sum(1 for c in clustering.assignment.values() if c == j)
    levels = np.round(clustering.centroids[j, :len(retained)], 1)
    print(f"{labels[j]:<20} n={size:<4} levels={levels}")

# %% [markdown]
# The generator knows which archetype each student was drawn from.

# %%
truth = {s: cohort.truth.archetype[s] for s in clustering.assignment}
print("ARI against planted archetypes:", round(adjusted_rand_index(clustering.assignment, truth), 3))
