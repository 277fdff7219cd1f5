"""MAP Market Lab - Markov-modulated jump markets"""

__version__ = "0.1.0"
