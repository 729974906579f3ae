"""HTML to Markdown conversion for fetched web pages.

A deliberately small converter built on the stdlib parser: headings,
paragraphs, emphasis, links, images, nested lists, tables, code, and
blockquotes.  Script/style content is dropped.  External crawler services
can replace this behind the same fetch interface; the golden-file tests pin
the behaviour of this one.
"""

from __future__ import annotations

import re
from html.parser import HTMLParser

_BLOCK_TAGS = {"p", "div", "section", "article", "header", "footer", "main"}
_SKIP_TAGS = {"script", "style", "noscript", "svg"}
_HEADING = {f"h{i}": i for i in range(1, 7)}


class _MarkdownBuilder(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.blocks: list[str] = []
        self._text: list[str] = []
        self._skip_depth = 0
        self._list_stack: list[dict] = []  # {"ordered": bool, "count": int}
        self._pre = False
        self._quote_depth = 0
        self._link_href: list[str] = []
        # table state
        self._table_rows: list[list[str]] | None = None
        self._row: list[str] | None = None
        self._cell: list[str] | None = None
        self._prefix = ""  # pending list marker, applied at next flush
        self.title = ""
        self._in_title = False

    # -- text assembly -----------------------------------------------------

    def _flush(self) -> None:
        text = "".join(self._text)
        self._text = []
        if self._pre:
            text = text.strip("\n")
        else:
            text = re.sub(r"[ \t]+", " ", text).strip()
        if not text:
            self._prefix = ""
            return
        if self._prefix:
            text = self._prefix + text
            self._prefix = ""
        if self._quote_depth:
            text = "\n".join("> " * self._quote_depth + line for line in text.splitlines())
        self.blocks.append(text)

    def _emit(self, text: str) -> None:
        self._flush()
        self.blocks.append(text)

    # -- parser hooks ------------------------------------------------------

    def handle_starttag(self, tag, attrs):
        if tag in _SKIP_TAGS:
            self._skip_depth += 1
            return
        if self._skip_depth:
            return
        attrs = dict(attrs)
        if tag == "title":
            self._in_title = True
        elif tag in _HEADING:
            self._flush()
        elif tag == "br":
            self._text.append("\n")
        elif tag == "hr":
            self._emit("---")
        elif tag in ("strong", "b"):
            self._text.append("**")
        elif tag in ("em", "i"):
            self._text.append("*")
        elif tag == "code" and not self._pre:
            self._text.append("`")
        elif tag == "pre":
            self._flush()
            self._pre = True
        elif tag == "a":
            self._link_href.append(attrs.get("href", ""))
            self._text.append("[")
        elif tag == "img":
            alt = attrs.get("alt", "")
            src = attrs.get("src", "")
            if src:
                self._text.append(f"![{alt}]({src})")
        elif tag in ("ul", "ol"):
            self._flush()
            self._list_stack.append({"ordered": tag == "ol", "count": 0})
        elif tag == "li":
            self._flush()
            if self._list_stack:
                level = self._list_stack[-1]
                level["count"] += 1
                indent = "  " * (len(self._list_stack) - 1)
                marker = f"{level['count']}." if level["ordered"] else "-"
                self._prefix = f"{indent}{marker} "
        elif tag == "blockquote":
            self._flush()
            self._quote_depth += 1
        elif tag == "table":
            self._flush()
            self._table_rows = []
        elif tag == "tr" and self._table_rows is not None:
            self._row = []
        elif tag in ("td", "th") and self._row is not None:
            self._cell = []
        elif tag in _BLOCK_TAGS:
            self._flush()

    def handle_endtag(self, tag):
        if tag in _SKIP_TAGS:
            self._skip_depth = max(0, self._skip_depth - 1)
            return
        if self._skip_depth:
            return
        if tag == "title":
            self._in_title = False
        elif tag in _HEADING:
            text = re.sub(r"\s+", " ", "".join(self._text)).strip()
            self._text = []
            if text:
                self.blocks.append("#" * _HEADING[tag] + " " + text)
        elif tag in ("strong", "b"):
            self._text.append("**")
        elif tag in ("em", "i"):
            self._text.append("*")
        elif tag == "code" and not self._pre:
            self._text.append("`")
        elif tag == "pre":
            code = "".join(self._text).strip("\n")
            self._text = []
            if code:
                self.blocks.append(f"```\n{code}\n```")
            self._pre = False
        elif tag == "a":
            href = self._link_href.pop() if self._link_href else ""
            self._text.append(f"]({href})" if href else "]()")
        elif tag == "li":
            self._flush()
        elif tag in ("ul", "ol"):
            self._flush()
            if self._list_stack:
                self._list_stack.pop()
        elif tag == "blockquote":
            self._flush()
            self._quote_depth = max(0, self._quote_depth - 1)
        elif tag in ("td", "th") and self._cell is not None:
            cell = re.sub(r"\s+", " ", "".join(self._cell)).strip()
            self._row.append(cell)
            self._cell = None
        elif tag == "tr" and self._row is not None:
            if self._row:
                self._table_rows.append(self._row)
            self._row = None
        elif tag == "table" and self._table_rows is not None:
            self.blocks.append(_render_table(self._table_rows))
            self._table_rows = None
        elif tag in _BLOCK_TAGS:
            self._flush()

    def handle_data(self, data):
        if self._skip_depth:
            return
        if self._in_title:
            self.title += data
            return
        if self._cell is not None:
            self._cell.append(data)
            return
        if self._table_rows is not None and self._row is None:
            return  # whitespace between table rows
        self._text.append(data if self._pre else data.replace("\n", " "))

    def result(self) -> str:
        self._flush()
        return "\n\n".join(b for b in self.blocks if b.strip())


def _render_table(rows: list[list[str]]) -> str:
    if not rows:
        return ""
    width = max(len(r) for r in rows)
    norm = [r + [""] * (width - len(r)) for r in rows]
    lines = ["| " + " | ".join(norm[0]) + " |",
             "| " + " | ".join("---" for _ in range(width)) + " |"]
    lines.extend("| " + " | ".join(row) + " |" for row in norm[1:])
    return "\n".join(lines)


def html_to_markdown(html: str) -> str:
    """Convert an HTML document to markdown text."""
    builder = _MarkdownBuilder()
    builder.feed(html)
    return builder.result()


def html_title(html: str) -> str:
    builder = _MarkdownBuilder()
    builder.feed(html)
    return re.sub(r"\s+", " ", builder.title).strip()
