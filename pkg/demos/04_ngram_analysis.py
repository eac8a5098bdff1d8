"""Count n-grams over a corpus, search around an anchor phrase, and
compare two corpora side by side, all with bounded-memory exact counting.
"""

import tempfile
from pathlib import Path

from personasim.ngrams import (
    NgramSpec,
    compare_corpora,
    containing_phrase,
    count_ngrams,
    render_comparison_text,
    render_table_text,
    tokenize,
    top_k,
)

print("tokenizer keeps dotted acronyms and hyphenated words whole:")
print(" ", tokenize("I was born in the U.S. and I'm hard-working, honestly."))

narratives = [
    "I was born in a small town in Ohio and I grew up in a small town mindset.",
    "Growing up in a small town in the Midwest shaped everything about me.",
    "We moved to New York for work, but the small town in my heart remained.",
    "Life in a small town in Ohio teaches patience and neighborliness.",
]
web_text = [
    "Cookies settings accept all cookies terms of service all rights reserved.",
    "New York Giants New York Jets results and the small town scores tonight.",
    "Sign in to continue reading this article about New York real estate.",
    "Accept cookies to view content. All rights reserved. Privacy policy.",
]

with tempfile.TemporaryDirectory() as tmp:
    a_path = Path(tmp) / "narratives.txt"
    b_path = Path(tmp) / "web.txt"
    a_path.write_text("\n".join(narratives) + "\n")
    b_path.write_text("\n".join(web_text) + "\n")

    spec = NgramSpec(n=5, lowercase=True)
    table_a = count_ngrams(a_path, spec, spill_threshold=50)  # force spills
    table_b = count_ngrams(b_path, spec)
    print(f"\nnarratives: {table_a.total_tokens} tokens over {table_a.doc_count} docs")
    print("top 5-grams:")
    print(render_table_text(top_k(table_a, 5)))

    print("\n5-grams anchored on 'small town' in the narratives:")
    anchored = containing_phrase(a_path, "small town", spec)
    print(render_table_text(anchored[:6]))

    print("\nside-by-side comparison (narratives vs web text):")
    print(render_comparison_text(compare_corpora(table_a, table_b, 4)))
