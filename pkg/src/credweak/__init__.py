"""Weakly supervised news veracity classification from LLM-extracted
credibility signals: prompt a completion backend with one question per
signal, encode the ternary answers as abstaining labeling functions, and
train a generative label model without ground truth to aggregate them into
binary misinformation predictions."""

__version__ = "0.1.0"
