"""
From one second of audio to a 98 x 40 MFCC matrix
==================================================

Synthesizes a keyword-like tone burst, runs it through the front end and
looks at what comes out.
"""

import numpy as np

from reskws.frontend import extract_mfcc, log_mel_energies, mel_filterbank, pad_or_clip
from reskws.synthetic import synth_word

rng = np.random.default_rng(0)

# a 0.7 s clip gets zero padded to exactly 16000 samples
clip = pad_or_clip(synth_word("yes", rng)[:11200])
print("samples:", clip.size)

feats = extract_mfcc(clip)
print("MFCC shape (frames, coefficients):", feats.shape)

# the filterbank spans 20 Hz to 4 kHz on the mel scale
weights, centers = mel_filterbank()
print("first centres (Hz):", np.round(centers[:4], 1))
print("last centres (Hz): ", np.round(centers[-4:], 1))

# where does the energy sit, frame by frame?
energies = log_mel_energies(clip)
loud = energies.max(axis=1) > energies.max() - 10
print("frames with speech-level energy:", int(loud.sum()))
print("dominant filter per loud frame:", np.argmax(energies[loud], axis=1)[:10], "...")

# a pure 1 kHz tone lights up a single band
t = np.arange(16000) / 16000
tone = log_mel_energies(np.sin(2 * np.pi * 1000 * t))
k = int(np.argmax(tone[0]))
print(f"1 kHz tone peaks in filter {k}, centred at {centers[k]:.0f} Hz")
