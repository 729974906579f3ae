from __future__ import annotations

from deepdesk.htmlmd import html_title, html_to_markdown

NESTED_PAGE = """
<html><head><title>  Trade Report </title><style>p {color: red}</style></head>
<body>
<h1>Art Market Overview</h1>
<p>The market <strong>grew</strong> in <em>most</em> regions.
   See <a href="https://example.org/data">the data</a>.</p>
<h2>Key drivers</h2>
<ul>
  <li>Regulation
    <ul><li>Export rules</li><li>Import duties</li></ul>
  </li>
  <li>Demand shifts</li>
</ul>
<ol><li>First step</li><li>Second step</li></ol>
<table>
  <tr><th>Year</th><th>Volume</th></tr>
  <tr><td>2020</td><td>12.5</td></tr>
  <tr><td>2021</td><td>14.1</td></tr>
</table>
<blockquote>Quoted analyst remark.</blockquote>
<pre>raw = [1, 2, 3]</pre>
<script>alert("never");</script>
<img alt="volume chart" src="https://example.org/chart.png">
</body></html>
"""


class TestConversion:
    def test_golden_structures(self):
        md = html_to_markdown(NESTED_PAGE)
        assert "# Art Market Overview" in md
        assert "## Key drivers" in md
        assert "**grew**" in md and "*most*" in md
        assert "[the data](https://example.org/data)" in md
        # nested list items with indentation
        assert "- Regulation" in md
        assert "  - Export rules" in md
        assert "  - Import duties" in md
        assert "1. First step" in md and "2. Second step" in md
        # pipe table with header separator
        assert "| Year | Volume |" in md
        assert "| --- | --- |" in md
        assert "| 2020 | 12.5 |" in md
        assert "| 2021 | 14.1 |" in md
        assert "> Quoted analyst remark." in md
        assert "```\nraw = [1, 2, 3]\n```" in md
        assert "![volume chart](https://example.org/chart.png)" in md
        assert "alert" not in md
        assert "color: red" not in md

    def test_title_extraction(self):
        assert html_title(NESTED_PAGE) == "Trade Report"

    def test_plain_fragment(self):
        assert html_to_markdown("<p>hello world</p>") == "hello world"

    def test_empty_input(self):
        assert html_to_markdown("") == ""

    def test_whitespace_collapse(self):
        md = html_to_markdown("<p>a\n   b\t c</p>")
        assert md == "a b c"
