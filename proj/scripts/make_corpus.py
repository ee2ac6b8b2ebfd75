#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Generate the bundled byte-level training corpus.

The text is produced from a small stochastic grammar so that it has real
structure (spelling, agreement, recurring entities, punctuation) without
depending on any third-party text. Output is deterministic for a given seed.
"""

import argparse
import random

NAMES = ["Ada", "Bram", "Cora", "Dmitri", "Elin", "Farah", "Goran", "Hana",
         "Ivo", "Juno", "Kasia", "Lior", "Mina", "Nils", "Odile", "Pavel",
         "Quinn", "Rosa", "Soren", "Tove", "Ugo", "Vera", "Wren", "Yusuf"]
PLACES = ["the harbor", "the old mill", "the market", "the library",
          "the northern ridge", "the river bend", "the station",
          "the orchard", "the lighthouse", "the workshop", "the valley",
          "the town square", "the archive", "the bakery", "the school"]
NOUNS = ["lantern", "letter", "engine", "garden", "bridge", "ledger",
         "compass", "kettle", "window", "ladder", "violin", "basket",
         "clock", "map", "boat", "candle", "hammer", "notebook", "radio",
         "bicycle", "mirror", "blanket", "telescope", "satchel"]
ADJS = ["old", "small", "bright", "heavy", "quiet", "broken", "green",
        "careful", "strange", "warm", "narrow", "silver", "patient",
        "sudden", "tired", "gentle", "distant", "curious"]
VERBS_T = [("repair", "repaired", "repairs"), ("carry", "carried", "carries"),
           ("find", "found", "finds"), ("open", "opened", "opens"),
           ("paint", "painted", "paints"), ("sell", "sold", "sells"),
           ("borrow", "borrowed", "borrows"), ("clean", "cleaned", "cleans"),
           ("build", "built", "builds"), ("measure", "measured", "measures"),
           ("study", "studied", "studies"), ("hide", "hid", "hides")]
VERBS_I = [("walk", "walked", "walks"), ("wait", "waited", "waits"),
           ("sing", "sang", "sings"), ("rest", "rested", "rests"),
           ("work", "worked", "works"), ("listen", "listened", "listens"),
           ("arrive", "arrived", "arrives"), ("return", "returned", "returns")]
TIMES = ["in the morning", "at noon", "after dinner", "before dawn",
         "on Sunday", "every evening", "during the storm", "last winter",
         "in early spring", "at midnight"]
WEATHER = ["it was raining", "the wind was cold", "the sky was clear",
           "fog covered the streets", "snow had fallen", "the sun was low"]
CONNECT = ["because", "while", "although", "after", "before", "when"]
NUMBER_WORDS = ["two", "three", "four", "five", "six", "seven", "eight",
                "nine", "ten", "twelve"]


def plural(noun):
    if noun.endswith(("s", "x", "ch", "sh")):
        return noun + "es"
    return noun + "s"


def np(rng):
    if rng.random() < 0.5:
        return "the " + rng.choice(ADJS) + " " + rng.choice(NOUNS)
    return "a " + rng.choice(NOUNS) if rng.random() < 0.5 else "the " + rng.choice(NOUNS)


def clause(rng, tense):
    who = rng.choice(NAMES)
    idx = 1 if tense == "past" else 2
    if rng.random() < 0.6:
        v = rng.choice(VERBS_T)[idx]
        return f"{who} {v} {np(rng)}"
    v = rng.choice(VERBS_I)[idx]
    return f"{who} {v} near {rng.choice(PLACES)}"


def sentence(rng):
    tense = "past" if rng.random() < 0.7 else "present"
    kind = rng.random()
    if kind < 0.30:
        s = clause(rng, tense) + " " + rng.choice(TIMES)
    elif kind < 0.50:
        s = clause(rng, tense) + " " + rng.choice(CONNECT) + " " + clause(rng, tense)
    elif kind < 0.62:
        s = rng.choice(WEATHER) + ", so " + clause(rng, "past")
    elif kind < 0.74:
        n = rng.choice(NUMBER_WORDS)
        s = f"There were {n} {plural(rng.choice(NOUNS))} in {rng.choice(PLACES)}"
    elif kind < 0.84:
        a, b = rng.sample(NAMES, 2)
        s = f"{a} asked {b} about {np(rng)}"
    elif kind < 0.92:
        n = rng.randint(2, 99)
        s = f"The {rng.choice(NOUNS)} cost {n} coins at {rng.choice(PLACES)}"
    else:
        a = rng.choice(NAMES)
        s = f"\"Where is {np(rng)}?\" said {a}"
    return s[0].upper() + s[1:] + "."


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--bytes", type=int, default=400_000)
    ap.add_argument("--out", default="data/corpus.txt")
    args = ap.parse_args()

    rng = random.Random(args.seed)
    parts = []
    size = 0
    while size < args.bytes:
        para = " ".join(sentence(rng) for _ in range(rng.randint(3, 7))) + "\n\n"
        parts.append(para)
        size += len(para)
    text = "".join(parts)[: args.bytes]
    with open(args.out, "wb") as f:
        f.write(text.encode("ascii"))


if __name__ == "__main__":
    main()
