"""
From raw Sorani text to padded id arrays
========================================

Normalization, subword vocabulary training and fixed-length encoding.
"""

from kuridiom.dataset import SyntheticSpec, generate_synthetic
from kuridiom.textnorm import normalize
from kuridiom.tokenizer import decode, encode, tokenize, train_vocab

# Arabic kaf, a tatweel run and a doubled space all collapse
raw = "كتێب  ـــ خوێندەوە"
print(repr(raw), "->", repr(normalize(raw)))

# a synthetic corpus stands in for real sentences
ds = generate_synthetic(SyntheticSpec(3, 8, 2, 20, seed=0))
corpus = [normalize(t) for t in ds.texts]
vocab = train_vocab(corpus, 300)
print(len(vocab), "tokens, first ten:", list(vocab.tokens[:10]))

sentence = corpus[0]
print(sentence)
print(tokenize(sentence, vocab))

enc = encode(sentence, vocab, max_len=24)
print(enc.ids)
print(enc.mask)
# specials drop out and continuation pieces rejoin
print(decode(enc.ids, vocab))
