# cython: language_level=3, boundscheck=False, wraparound=False
# Compiled build of the interpreter kernel; the source is shared verbatim.
include "_semantics.py"
