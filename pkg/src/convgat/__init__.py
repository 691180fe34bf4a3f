"""Graph attention classifier for abusive comments in conversation threads."""

__version__ = "0.1.0"
