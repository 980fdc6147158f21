"""Few-shot concept learning with natural-language hypothesis search.

Subpackages implement the shared numerics (`autodiff`, `optim`, `params`,
`seq`), the domain-independent three-phase protocol (`protocol`,
`baselines`), three task domains (`shapes`, `strings`, `nav`), and the
experiment harness (`config`, `runner`, `cli`).
"""

__version__ = "0.1.0"
