"""Regenerates golden_metrics.json with sacreBLEU 2.3.1 (pip install sacrebleu==2.3.1).

Run from this directory: python3 gen_golden.py
"""
import json
import random

import sacrebleu
from sacrebleu.metrics import BLEU, CHRF
from sacrebleu.tokenizers.tokenizer_13a import Tokenizer13a

assert sacrebleu.__version__ == "2.3.1", sacrebleu.__version__

REFS = [
    "The cat sat on the mat.",
    "Der schnelle braune Fuchs springt über den faulen Hund.",
    "Prices rose by 3.5% in 2023, according to the report.",
    "He said: \"We'll be there at 10:30 a.m.\"",
    "Pacienti s diabetem 2. typu by měli pravidelně kontrolovat hladinu glukózy.",
    "Пацієнти з діабетом повинні регулярно перевіряти рівень глюкози.",
    "Tom & Jerry isn't a documentary.",
    "The dose is 1,000 mg per day (max. 4 g).",
    "Rinse the wound with saline solution and apply a sterile dressing.",
    "Ina son zuwa kasuwa gobe da safe.",
    "E-mail us at info@example.com or call +1-800-555-0199.",
    "The results were statistically significant (p < 0.05).",
    "Blood pressure: 120/80 mmHg; pulse: 72 bpm.",
    "Die Behandlung dauert in der Regel drei bis vier Wochen.",
    "Ukrajina a Česko podepsaly novou dohodu o spolupráci.",
    "A B C D E F G",
    "Well... that's one way to do it!",
    "See section 4.2-4.5 for details [1].",
    "Take two tablets every 8 hours with food.",
    "The committee approved the budget on 12 March 2021.",
    "She bought apples, oranges and bananas.",
    "Hausa is spoken by more than 70 million people.",
    "Symptoms include fever, cough & fatigue.",
    "Der Patient wurde am 5. Mai entlassen.",
    "The temperature dropped to -5 degrees overnight.",
]

HYPS = [
    "The cat sat on a mat.",
    "Der schnelle Fuchs springt über den faulen Hund.",
    "Prices rose 3.5 % in 2023 according to the report.",
    "He said: \"We will be there at 10:30 am.\"",
    "Pacienti s diabetem typu 2 by měli pravidelně sledovat hladinu glukózy.",
    "Пацієнти з діабетом мають регулярно перевіряти рівень цукру.",
    "Tom &amp; Jerry is not a documentary.",
    "The dose is 1,000mg per day (max 4 g).",
    "Rinse the wound with salt solution and put a sterile bandage.",
    "Ina son zuwa kasuwa gobe.",
    "Email us at info@example.com or call +1-800-555-0199",
    "The results were significant (p<0.05).",
    "Blood pressure 120/80 mmHg, pulse 72 bpm.",
    "Die Behandlung dauert normalerweise drei bis vier Wochen.",
    "Ukrajina a Česko podepsaly dohodu o spolupráci.",
    "A B C D E F G",
    "Well... that is one way of doing it!",
    "See sections 4.2–4.5 for details [1].",
    "Take 2 tablets every eight hours with food.",
    "The committee approved the budget on March 12, 2021.",
    "She bought oranges, apples and bananas.",
    "Hausa is spoken by over 70 million people.",
    "Symptoms include fever , cough and fatigue .",
    "Der Patient wurde am 5. Mai entlassen.",
    "Temperature fell to -5 degrees at night.",
]

# Short / degenerate cases exercise smoothing, brevity penalty and effective order.
EXTRA = [
    ("the the the", "the cat"),
    ("the cat sat", "the cat sat on the mat"),
    ("cat", "the cat"),
    ("", "the cat"),
    ("the cat", ""),
    ("a", "a"),
    ("x y", "x y z"),
    ("  spaced   out\ttext ", "spaced out text"),
    ("3.14159 is pi.", "pi is 3.14159."),
    ("Mr. Smith's car, the red one.", "Mr. Smith's red car."),
    ("&lt;tag&gt; &quot;q&quot;", "<tag> \"q\""),
    ("ÄÖÜ äöü ß", "ÄÖÜ äöü ss"),
    ("end-to-end 10-20", "end to end 10 - 20"),
    ("!!!", "???"),
    ("日本語のテキスト", "日本語テキスト"),
    ("one two three four five", "five four three two one"),
    ("the", "the the the the"),
    ("a b a b a b", "a b"),
    ("Hello, world!", "Hello world"),
    ("{x} [y] (z) ~w~ `v` ^u^ |t| _s_", "{x} [y] (z)"),
    ("price: $5,000.00", "price $5000"),
    ("co-operate", "cooperate"),
    ("tab\tseparated", "tab separated"),
    ("Ende.", "Ende ."),
    ("Ein Test", "Ein Test"),
]

pairs = list(zip(HYPS, REFS)) + EXTRA
assert len(pairs) == 50

chrf = CHRF()
bleu_corpus = BLEU()  # eff:no, tok:13a, smooth:exp

hyps = [h for h, _ in pairs]
refs = [r for _, r in pairs]
sentences = []
for h, r in pairs:
    sentences.append({
        "hyp": h,
        "ref": r,
        "chrf": sacrebleu.sentence_chrf(h, [r]).score,
        # sentence_bleu enables effective order by default
        "bleu": sacrebleu.sentence_bleu(h, [r]).score,
    })

tok = Tokenizer13a()
tok_cases = ["Hello, world!", "3.5", "", "Prices rose by 3.5% in 2023, according to the report.",
             "He said: \"We'll be there at 10:30 a.m.\"", "&amp;lt; 1,000 a,b 5-3 x-y ...",
             "E-mail: info@example.com", "(p < 0.05)."]

rng = random.Random(13)
subsets = []
for size in (1, 3, 10, 50):
    idx = sorted(rng.sample(range(50), size))
    subsets.append({
        "indices": idx,
        "chrf": chrf.corpus_score([hyps[i] for i in idx], [[refs[i] for i in idx]]).score,
        "bleu": bleu_corpus.corpus_score([hyps[i] for i in idx], [[refs[i] for i in idx]]).score,
    })

assert chrf.get_signature().format() == "nrefs:1|case:mixed|eff:yes|nc:6|nw:0|space:no|version:2.3.1"
assert bleu_corpus.get_signature().format() == "nrefs:1|case:mixed|eff:no|tok:13a|smooth:exp|version:2.3.1"

out = {
    "generator": f"sacrebleu {sacrebleu.__version__}",
    "sentences": sentences,
    "corpus": subsets,
    "tokenize_13a": [{"text": t, "tokens": tok(t.rstrip()).split()} for t in tok_cases],
}
with open("golden_metrics.json", "w", encoding="utf-8") as f:
    json.dump(out, f, ensure_ascii=False, indent=1)
print(json.dumps(subsets[-1]))
for s in sentences[-25:-20]:
    print(s)
