"""Toolkit for training and evaluating subjective-voice-descriptor scorers.

Scorers are trained either from absolute 1-5 ratings (MSE regression) or
from forced 4-choice pairwise comparisons (RankNet), and evaluated with
pairwise preference precision against held-out speaker comparisons.
"""

__version__ = "0.1.0"
