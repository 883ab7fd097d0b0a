"""
Core implementation of mcnn-lesion.

This package contains the numeric core, the classifier, the additive
ensemble, evaluation, data I/O and the shared configuration, models and
exceptions the command-line front end builds on.
"""
