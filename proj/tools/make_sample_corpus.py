#!/usr/bin/env python3
"""Writes data/sample_en_de.tsv, a small synthetic English-German caption corpus.

Sentences come from a fixed grammar with German case and gender agreement, so
the output depends only on the seed. Usage: make_sample_corpus.py [OUT] [N] [SEED]
"""

import random
import sys
from pathlib import Path

# noun: (english singular, english plural, german singular, german plural, gender)
PEOPLE = [
    ("man", "men", "mann", "männer", "m"),
    ("woman", "women", "frau", "frauen", "f"),
    ("child", "children", "kind", "kinder", "n"),
    ("boy", "boys", "junge", "jungen", "m"),
    ("girl", "girls", "mädchen", "mädchen", "n"),
    ("dog", "dogs", "hund", "hunde", "m"),
    ("worker", "workers", "arbeiter", "arbeiter", "m"),
    ("player", "players", "spieler", "spieler", "m"),
]

# adjective: (english, german stem)
ADJECTIVES = [
    ("young", "jung"), ("old", "alt"), ("small", "klein"), ("tall", "groß"),
    ("happy", "glücklich"), ("red", "rot"), ("blue", "blau"), ("black", "schwarz"),
    ("white", "weiß"), ("green", "grün"),
]

# intransitive: (english -ing, german 3sg, german 3pl)
INTRANSITIVE = [
    ("running", "läuft", "laufen"), ("sitting", "sitzt", "sitzen"),
    ("standing", "steht", "stehen"), ("walking", "geht", "gehen"),
    ("smiling", "lächelt", "lächeln"), ("playing", "spielt", "spielen"),
    ("jumping", "springt", "springen"), ("waiting", "wartet", "warten"),
]

# transitive verb: (english -ing, german 3sg, german 3pl)
TRANSITIVE = [
    ("holding", "hält", "halten"), ("carrying", "trägt", "tragen"),
    ("throwing", "wirft", "werfen"), ("watching", "beobachtet", "beobachten"),
    ("riding", "fährt", "fahren"), ("pushing", "schiebt", "schieben"),
]

# object: (english, german, gender)
OBJECTS = [
    ("ball", "ball", "m"), ("bike", "fahrrad", "n"), ("bag", "tasche", "f"),
    ("hat", "hut", "m"), ("book", "buch", "n"), ("box", "kiste", "f"),
    ("cup", "tasse", "f"), ("flag", "fahne", "f"), ("stick", "stock", "m"),
]

# place: (english, german)
PLACES = [
    ("in the park", "im park"), ("on the street", "auf der straße"),
    ("on the beach", "am strand"), ("in the snow", "im schnee"),
    ("near the water", "am wasser"), ("in front of a building", "vor einem gebäude"),
    ("on a bench", "auf einer bank"), ("in the city", "in der stadt"),
    ("on the grass", "auf dem gras"), ("at night", "in der nacht"),
]

NUMBERS = [("two", "zwei"), ("three", "drei"), ("four", "vier")]

INDEF_NOM = {"m": ("ein", "er"), "f": ("eine", "e"), "n": ("ein", "es")}
INDEF_ACC = {"m": ("einen", "en"), "f": ("eine", "e"), "n": ("ein", "es")}


def subject(rng):
    en_sg, en_pl, de_sg, de_pl, gender = rng.choice(PEOPLE)
    adj = rng.choice(ADJECTIVES) if rng.random() < 0.5 else None
    if rng.random() < 0.3:
        num_en, num_de = rng.choice(NUMBERS)
        en = [num_en] + ([adj[0]] if adj else []) + [en_pl]
        de = [num_de] + ([adj[1] + "e"] if adj else []) + [de_pl]
        return en, de, True
    art, ending = INDEF_NOM[gender]
    en_art = "an" if (adj[0] if adj else en_sg)[0] in "aeiou" else "a"
    en = [en_art] + ([adj[0]] if adj else []) + [en_sg]
    de = [art] + ([adj[1] + ending] if adj else []) + [de_sg]
    return en, de, False


def predicate(rng, plural):
    if rng.random() < 0.5:
        ing, sg, pl = rng.choice(INTRANSITIVE)
        return [ing], [pl if plural else sg]
    ing, sg, pl = rng.choice(TRANSITIVE)
    obj_en, obj_de, gender = rng.choice(OBJECTS)
    adj = rng.choice(ADJECTIVES) if rng.random() < 0.4 else None
    art, ending = INDEF_ACC[gender]
    en_art = "an" if (adj[0] if adj else obj_en)[0] in "aeiou" else "a"
    en = [ing, en_art] + ([adj[0]] if adj else []) + [obj_en]
    de = [pl if plural else sg, art] + ([adj[1] + ending] if adj else []) + [obj_de]
    return en, de


def sentence(rng):
    subj_en, subj_de, plural = subject(rng)
    pred_en, pred_de = predicate(rng, plural)
    en = subj_en + ["are" if plural else "is"] + pred_en
    de = subj_de + pred_de
    if rng.random() < 0.7:
        place_en, place_de = rng.choice(PLACES)
        en += place_en.split()
        de += place_de.split()
    return " ".join(en) + " .", " ".join(de) + " ."


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data/sample_en_de.tsv")
    n = int(sys.argv[2]) if len(sys.argv) > 2 else 2000
    seed = int(sys.argv[3]) if len(sys.argv) > 3 else 7
    rng = random.Random(seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="\n") as f:
        for _ in range(n):
            en, de = sentence(rng)
            f.write(f"{en}\t{de}\n")


if __name__ == "__main__":
    main()
