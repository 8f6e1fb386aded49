"""Simulator and analytic toolkit for delayed-execution PoW protocols.

Subpackages:
    queueing  -- M/D/1 machinery, withholding bound, block-delay planner
    fairness  -- legacy-protocol fairness Markov chains
    hca       -- hidden-chain-attack Markov chain and overflow-attack bound
    protocol  -- delayed-execution block/miner state machine
    engine    -- seeded discrete-event simulator and adversary strategies
    report    -- figure/table reproduction
    cli       -- command-line entry point
"""

__version__ = "0.1.0"
