"""melodygen: MIDI corpus normalization and monophonic melody generation
with a note-level LM, a variational recurrent autoencoder, and its
history-conditioned variant (VRASH)."""

__version__ = "0.1.0"
