"""Simulated novice programmers under symbolic behavioral and knowledge constraints.

The main entry points:

- ``behavior``: semi-Markov sampling of metacognitive segments, cognitive steps
  and interrupts.
- ``knowledge``: Bayesian Knowledge Tracing and constraint rendering.
- ``environment``: problems, sandboxed test execution, observation filtering.
- ``agent`` / ``prompts`` / ``backend``: the Strategist and Executor stages and
  the text-generation backends they call.
- ``session``: one session or a batch of them.
- ``trace``: trace files, invariant checks and the code-state breakdown.
- ``metrics``: fidelity metrics, fact sheets and signal detection statistics.
"""

__version__ = "0.1.0"
