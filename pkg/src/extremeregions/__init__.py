"""Regionalisation of rainfall extremes by F-madogram clustering, with Smith-model checks."""

__version__ = "0.1.0"
