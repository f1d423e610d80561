#!/usr/bin/env python3
"""Derive the span-corruption golden fixture by straight-line simulation.

Runs the partition arithmetic by hand for the pinned instance (20 tokens,
regular denoiser: rate 0.15, mean span 3) and writes the expected
(input, target) pair. This instance forces a single span, so both
compositions are fully determined and zero random draws are consumed;
the output is independent of the seed recorded in the fixture.
"""

import json
import pathlib

N_WORDS = 100          # vocabulary: 4 specials + 100 words + 64 sentinels
FIRST_WORD_ID = 4
SENTINEL_BASE = FIRST_WORD_ID + N_WORDS
EOS = 3

L = 20
tokens = list(range(FIRST_WORD_ID, FIRST_WORD_ID + L))

rate, mean_span = 0.15, 3.0
num_noise = round(rate * L)            # 3
assert num_noise == 3
num_spans = max(1, round(num_noise / mean_span))  # 1
assert num_spans == 1
num_kept = L - num_noise               # 17

# One span: the layout alternates kept/noise and ends with noise, so the
# kept segment is tokens[0:17] and the noise span is tokens[17:20].
input_ids = tokens[:num_kept] + [SENTINEL_BASE]
target = [SENTINEL_BASE] + tokens[num_kept:] + [EOS]

fixture = {
    "description": (
        "Regular span corruption (rate 0.15, mean span 3) on a 20-token "
        "input. num_noise = round(0.15*20) = 3 and num_spans = max(1, "
        "round(3/3)) = 1, so the compositions are forced and no random "
        "draws are consumed; the result holds for any seed. Vocabulary: "
        "4 specials, 100 words, 64 sentinels on top (sentinel_0 = 104)."
    ),
    "seed": 42,
    "n_words": N_WORDS,
    "tokens": tokens,
    "input": input_ids,
    "target": target,
}

out = pathlib.Path(__file__).resolve().parents[1] / "crates/almaforge/fixtures/span_golden.json"
out.parent.mkdir(parents=True, exist_ok=True)
out.write_text(json.dumps(fixture, indent=2) + "\n")
print(f"wrote {out}")
