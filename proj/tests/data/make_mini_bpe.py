#!/usr/bin/env python3
"""Builds the miniature BPE fixture files and their frozen expected ids.

The encoder below is a reference byte-level BPE (the standard vocab.json +
merges.txt scheme) implemented independently of the C++ code under test.
Run from this directory:  python3 make_mini_bpe.py
"""

import json

import regex

PRETOKEN_PATTERN = regex.compile(
    r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+"""
)


def bytes_to_unicode():
    bs = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("\xa1"), ord("\xac") + 1))
        + list(range(ord("\xae"), ord("\xff") + 1))
    )
    cs = bs[:]
    n = 0
    for b in range(2**8):
        if b not in bs:
            bs.append(b)
            cs.append(2**8 + n)
            n += 1
    return dict(zip(bs, [chr(c) for c in cs]))


BYTE_ENCODER = bytes_to_unicode()

MERGES = [
    ("O", "n"),
    ("c", "e"),
    ("On", "ce"),
    ("Ġ", "u"),
    ("p", "o"),
    ("Ġu", "po"),
    ("Ġupo", "n"),
    ("Ġ", "a"),
    ("t", "i"),
    ("m", "e"),
    ("ti", "me"),
    ("Ġ", "time"),
    ("t", "h"),
    ("th", "e"),
    ("Ġ", "the"),
]

TEXTS = [
    "Once upon a time",
    "",
    "the theme",
    " the\n\nOnce!",
    "don't stop",
    "héllo   there",
    "  spaced  out  ",
    "123 cats, 45 dogs!",
    "Once... upon\ta time\n",
]


def build_vocab():
    vocab = {}
    for b in range(256):
        vocab[BYTE_ENCODER[b]] = b
    next_id = 256
    for left, right in MERGES:
        vocab[left + right] = next_id
        next_id += 1
    return vocab


def get_pairs(word):
    return {(word[i], word[i + 1]) for i in range(len(word) - 1)}


def bpe(chunk, ranks):
    word = tuple(chunk)
    pairs = get_pairs(word)
    if not pairs:
        return word
    while True:
        bigram = min(pairs, key=lambda p: ranks.get(p, float("inf")))
        if bigram not in ranks:
            break
        first, second = bigram
        new_word = []
        i = 0
        while i < len(word):
            try:
                j = word.index(first, i)
            except ValueError:
                new_word.extend(word[i:])
                break
            new_word.extend(word[i:j])
            i = j
            if i < len(word) - 1 and word[i] == first and word[i + 1] == second:
                new_word.append(first + second)
                i += 2
            else:
                new_word.append(word[i])
                i += 1
        word = tuple(new_word)
        if len(word) == 1:
            break
        pairs = get_pairs(word)
    return word


def encode(text, vocab, ranks):
    ids = []
    for chunk in PRETOKEN_PATTERN.findall(text):
        symbols = [BYTE_ENCODER[b] for b in chunk.encode("utf-8")]
        for token in bpe(symbols, ranks):
            ids.append(vocab[token])
    return ids


def main():
    vocab = build_vocab()
    ranks = {pair: i for i, pair in enumerate(MERGES)}

    with open("mini_vocab.json", "w", encoding="utf-8") as f:
        json.dump(vocab, f, ensure_ascii=False, indent=0, sort_keys=True)
    with open("mini_merges.txt", "w", encoding="utf-8") as f:
        f.write("#version: 0.2\n")
        for left, right in MERGES:
            f.write(f"{left} {right}\n")

    cases = [{"text": t, "ids": encode(t, vocab, ranks)} for t in TEXTS]
    with open("mini_expected.json", "w", encoding="utf-8") as f:
        json.dump(cases, f, ensure_ascii=False, indent=1)

    phrase = cases[0]
    print("Once upon a time ->", phrase["ids"], f"({len(phrase['ids'])} tokens)")
    for c in cases:
        print(repr(c["text"]), "->", c["ids"])


if __name__ == "__main__":
    main()
