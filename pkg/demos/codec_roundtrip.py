"""Freeze a density into tables, range code a few vectors, and compare sizes.

Run: python demos/codec_roundtrip.py
"""

import numpy as np

from compressible_features.codec import HEADER_SIZE, build_tables, decode, encode
from compressible_features.entropy_model import FactorizedDensity

rng = np.random.default_rng(0)
density = FactorizedDensity.random(16, rng, spread=0.6)
tables = build_tables(density)
print("support per channel:", [tables.support_len(c) for c in range(tables.channels)])

# symbols mostly inside the support, plus one far outlier that takes the escape path
z = np.array([rng.integers(m, m + tables.support_len(c)) for c, m in enumerate(tables.support_min)])
z[3] = 123456
blob = encode(z, tables)
data = blob.to_bytes()
assert np.array_equal(decode(data, tables), z)

model_bits = density.rate_bits_discrete(z[None, :]).total_bits
print(f"model estimate {model_bits:.1f} bits, payload {8 * len(blob.payload)} bits")
print(f"blob {len(data)} bytes = {HEADER_SIZE} header + {len(blob.payload)} payload + {4 * len(blob.escapes)} escape")
