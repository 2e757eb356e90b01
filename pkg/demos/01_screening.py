"""Screening a test chain for coherence.

Consecutive tests in a longitudinal chain should correlate strongly. A test
that measures something else (a new format, a different syllabus) shows up
as a dip in the consecutive correlations, and the screen removes it.

Run with ``python3 demos/01_screening.py``.
"""

# %%
import numpy as np

from longtrend.data_model import TestKey
from longtrend.screening import ScreeningPolicy, TestCorrelationMatrix, screen_tests, validate_chain

# %% [markdown]
# Five yearly tests. Test 3 correlates weakly with both neighbours.

# %%
names = ["T1", "T2", "T3", "T4", "T5"]
upper = [0.84, 0.23, 0.91, 0.88,
         0.50, 0.92, 0.81,
         0.23, 0.58,
         0.83]
keys = [TestKey(n, "X", "mathematics", 3 + i, None, 2014 + i, i) for i, n in enumerate(names)]
matrix = TestCorrelationMatrix.from_upper(keys, upper)
print(np.round(matrix.r, 2))

# %%
outcome = screen_tests(matrix, ScreeningPolicy(theta_low=0.70))
print("retained:", [t.test_id for t in outcome.retained])
for e in outcome.excluded:
    print("excluded:", e.test.test_id, e.reason, e.offending_r)
print("consecutive r after screening:", np.round(outcome.final_consecutive_r, 2))
print(validate_chain(outcome))

# %% [markdown]
# A seven-test chain with two organizations and paired variants. The
# later-grade tests from organization B hang together, but the grade-6
# pair does not track the rest of the chain.

# %%
names = ["A5", "B6A", "B6B", "A7", "A8", "B9A", "B9B"]
upper = [0.50, 0.46, 0.70, 0.75, 0.69, 0.57,
         0.68, 0.40, 0.42, 0.37, 0.38,
         0.37, 0.38, 0.38, 0.36,
         0.72, 0.68, 0.53,
         0.70, 0.62,
         0.60]
keys = []
for i, n in enumerate(names):
    grade = int(n[1])
    keys.append(TestKey(n, n[0], "national_language", grade, n[2:] or None, 2010 + grade, i))
outcome = screen_tests(TestCorrelationMatrix.from_upper(keys, upper))
print("retained:", [t.test_id for t in outcome.retained])
print("excluded in order:", [e.test.test_id for e in outcome.excluded])
