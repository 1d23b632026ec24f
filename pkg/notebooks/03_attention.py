"""
Self-attention over time
========================

Attention weights are row-stochastic. Without positional encodings the stack
is permutation-equivariant, and adding them makes it order-sensitive.
"""

import numpy as np

from dcenet.attention import AttentionLayer, attention_weights, positional_encoding, self_attention_encode
from dcenet.autodiff import Tensor

rng = np.random.default_rng(0)
x = rng.normal(size=(8, 16))

w = attention_weights(Tensor(x), Tensor(x)).data
print("row sums:", np.round(w.sum(axis=1), 12))

layers = [AttentionLayer(16, 16, 2, rng) for _ in range(2)]
perm = rng.permutation(8)
plain = self_attention_encode(layers, x, "none").data
print("equivariant without encodings:", np.allclose(self_attention_encode(layers, x[perm], "none").data, plain[perm]))
pe = self_attention_encode(layers, x, "each").data
print("equivariant with encodings:   ", np.allclose(self_attention_encode(layers, x[perm], "each").data, pe[perm]))

print("first rows of the sinusoidal table:")
print(np.round(positional_encoding(3, 6), 4))
