"""Chat prompt templates for the hosted-model backend.

Templates use ``{name}`` slots filled with ``str.format``. The output
grammars here are what the parsers in ``remote`` expect. The heading
template is a reconstruction; no reference wording exists for it.
"""

from __future__ import annotations

from ..taxonomy import Taxonomy, Vocabulary

HEADINGS = (
    "Read the privacy policy text below and list its main section headings. "
    "Copy each heading exactly as it appears, one per line, in document order. "
    "Print only the headings.\n\nText:\n{text}"
)

CLASSIFY = (
    "Assign the privacy policy paragraph below to one of these data practice "
    "categories:\n{categories}\n"
    "Pick the single best category and justify it with an excerpt copied word for "
    "word from the paragraph. Answer in exactly this layout:\n"
    "Matching category = 'category'\n"
    "Reasoning = 'excerpt'\n\nParagraph:\n{text}"
)

DECODE = (
    "From the privacy policy text below, pull out every data practice as an object "
    "with the keys data, purpose, processing, storage and recipients. "
    "data names the kind of information and must not be empty. The other keys may be "
    "empty strings when the text says nothing about them. "
    "Reply with a JSON list only, for example "
    "[{{\"data\": \"...\", \"purpose\": \"...\", \"processing\": \"...\", "
    "\"storage\": \"...\", \"recipients\": \"...\"}}]\n\nText:\n{text}"
)

MAP_ITEMS = (
    "Map every entry of evaluation_list to the closest keyword from keyword_list = {keywords}. "
    "Use 'generic information' only when an entry is too vague for any specific keyword, "
    "and 'N/A' when the entry is not a kind of data at all. "
    "Reply only with output_list = {{'entry': 'keyword', ...}} keeping the input order.\n"
    "evaluation_list = {items}"
)

MAP_PURPOSES = (
    "Map every entry of purpose_list to the closest keyword from keyword_list = {keywords}. "
    "Reply only with output_list = {{'entry': 'keyword', ...}} keeping the input order.\n"
    "purpose_list = {items}"
)


def category_lines(taxonomy: Taxonomy) -> str:
    return "\n".join(f"{i + 1}. {name}" for i, name in enumerate(taxonomy.practice_classes))


def mapping_prompt(items: list[str], vocabulary: Vocabulary, taxonomy: Taxonomy) -> str:
    template = MAP_ITEMS if vocabulary is Vocabulary.ITEMS else MAP_PURPOSES
    keywords = taxonomy.vocabulary_keywords(vocabulary)
    if vocabulary is Vocabulary.ITEMS:
        keywords = keywords[:-2]  # sentinels are described in prose
    return template.format(keywords=repr(keywords), items=repr(list(items)))
