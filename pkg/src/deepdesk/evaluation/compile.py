"""Deterministic markdown-report-to-PDF compilation.

Reports are laid out onto fixed-size pages rendered as rasters, which both
become the PDF pages and are saved as PNGs for the vision judge.  Rendering
involves no timestamps or randomness, so compiling the same bundle twice
produces identical page rasters; the PDF container's creation dates are
rewritten to a constant for byte-stable output.

Local assets are embedded (a corrupt one aborts compilation, naming it);
external figure urls are never fetched and render as captioned placeholder
boxes.
"""

from __future__ import annotations

import glob
import os
import re
from dataclasses import dataclass

from markdown_it import MarkdownIt
from PIL import Image, ImageDraw, ImageFont, UnidentifiedImageError

from ..bundle import ReportBundle
from ..errors import CompileError

PAGE_SIZE = (816, 1056)  # US letter at 96 dpi
MARGIN = 72
CONTENT_WIDTH = PAGE_SIZE[0] - 2 * MARGIN
_FIXED_PDF_DATE = b"D:20000101000000Z"

_FONT_CANDIDATE_GLOBS = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans{suffix}.ttf",
    "/usr/local/lib/python3*/dist-packages/matplotlib/mpl-data/fonts/ttf/DejaVuSans{suffix}.ttf",
    "/usr/lib/python3*/site-packages/matplotlib/mpl-data/fonts/ttf/DejaVuSans{suffix}.ttf",
]


def _find_font(suffix: str) -> str | None:
    override = os.environ.get("DEEPDESK_FONT_DIR")
    if override:
        candidate = os.path.join(override, f"DejaVuSans{suffix}.ttf")
        if os.path.exists(candidate):
            return candidate
    for pattern in _FONT_CANDIDATE_GLOBS:
        hits = sorted(glob.glob(pattern.format(suffix=suffix)))
        if hits:
            return hits[0]
    return None


class _Fonts:
    def __init__(self):
        regular = _find_font("")
        bold = _find_font("-Bold") or regular
        mono = _find_font("Mono") or regular

        def load(path, size):
            if path:
                return ImageFont.truetype(path, size)
            return ImageFont.load_default()

        self.body = load(regular, 13)
        self.small = load(regular, 10)
        self.bold = load(bold, 13)
        self.mono = load(mono, 11)
        self.h = {
            1: load(bold, 24),
            2: load(bold, 19),
            3: load(bold, 16),
            4: load(bold, 14),
            5: load(bold, 13),
            6: load(bold, 13),
        }


_fonts: _Fonts | None = None


def _get_fonts() -> _Fonts:
    global _fonts
    if _fonts is None:
        _fonts = _Fonts()
    return _fonts


def _wrap(text: str, font, width: int) -> list[str]:
    words = text.split()
    if not words:
        return []
    lines: list[str] = []
    current = words[0]
    for word in words[1:]:
        candidate = f"{current} {word}"
        if font.getlength(candidate) <= width:
            current = candidate
        else:
            lines.append(current)
            current = word
    lines.append(current)
    return lines


def _line_height(font) -> int:
    ascent, descent = font.getmetrics()
    return ascent + descent + 4


@dataclass
class _Block:
    """One renderable unit: knows its height and how to draw itself."""

    height: int
    draw: callable  # (ImageDraw, page Image, y) -> None
    breakable: bool = False


class _Layout:
    def __init__(self, title: str):
        self.title = title
        self.blocks: list[_Block] = []

    def add_text(self, text: str, font, *, indent: int = 0, color=(20, 20, 20),
                 gap: int = 8):
        width = CONTENT_WIDTH - indent
        lines = _wrap(text, font, width)
        if not lines:
            return
        lh = _line_height(font)
        height = lh * len(lines) + gap

        def draw(draw_ctx, page, y):
            for i, line in enumerate(lines):
                draw_ctx.text((MARGIN + indent, y + i * lh), line, font=font, fill=color)

        self.blocks.append(_Block(height=height, draw=draw))

    def add_rule(self):
        def draw(draw_ctx, page, y):
            draw_ctx.line([(MARGIN, y + 4), (PAGE_SIZE[0] - MARGIN, y + 4)],
                          fill=(160, 160, 160), width=1)

        self.blocks.append(_Block(height=16, draw=draw))

    def add_code(self, code: str):
        fonts = _get_fonts()
        lines = code.rstrip("\n").split("\n")
        lh = _line_height(fonts.mono)
        height = lh * len(lines) + 16

        def draw(draw_ctx, page, y):
            draw_ctx.rectangle(
                [MARGIN - 4, y, PAGE_SIZE[0] - MARGIN + 4, y + height - 10],
                fill=(244, 244, 244))
            for i, line in enumerate(lines):
                draw_ctx.text((MARGIN + 4, y + 6 + i * lh), line,
                              font=fonts.mono, fill=(40, 40, 40))

        self.blocks.append(_Block(height=height, draw=draw))

    def add_image(self, image: Image.Image, caption: str):
        fonts = _get_fonts()
        max_w = CONTENT_WIDTH
        max_h = int(PAGE_SIZE[1] * 0.55)
        scale = min(max_w / image.width, max_h / image.height, 1.0)
        w = max(1, int(image.width * scale))
        h = max(1, int(image.height * scale))
        rendered = image.convert("RGB").resize((w, h))
        caption_lines = _wrap(caption, fonts.small, CONTENT_WIDTH) if caption else []
        lh = _line_height(fonts.small)
        height = h + len(caption_lines) * lh + 16

        def draw(draw_ctx, page, y):
            page.paste(rendered, (MARGIN + (CONTENT_WIDTH - w) // 2, y))
            for i, line in enumerate(caption_lines):
                draw_ctx.text((MARGIN, y + h + 4 + i * lh), line,
                              font=fonts.small, fill=(90, 90, 90))

        self.blocks.append(_Block(height=height, draw=draw))

    def add_placeholder(self, url: str, alt: str):
        fonts = _get_fonts()
        box_h = 90
        caption = f"external figure: {url}"
        caption_lines = _wrap(caption, fonts.small, CONTENT_WIDTH)
        lh = _line_height(fonts.small)
        height = box_h + len(caption_lines) * lh + 16

        def draw(draw_ctx, page, y):
            draw_ctx.rectangle(
                [MARGIN, y, PAGE_SIZE[0] - MARGIN, y + box_h],
                outline=(150, 150, 150), width=2)
            label = alt or "external figure (not fetched)"
            draw_ctx.text((MARGIN + 12, y + box_h // 2 - 8), label,
                          font=fonts.small, fill=(120, 120, 120))
            for i, line in enumerate(caption_lines):
                draw_ctx.text((MARGIN, y + box_h + 4 + i * lh), line,
                              font=fonts.small, fill=(90, 90, 90))

        self.blocks.append(_Block(height=height, draw=draw))

    def add_table(self, rows: list[list[str]]):
        if not rows:
            return
        fonts = _get_fonts()
        n_cols = max(len(r) for r in rows)
        norm = [r + [""] * (n_cols - len(r)) for r in rows]
        col_w = CONTENT_WIDTH // n_cols
        lh = _line_height(fonts.small)
        wrapped: list[list[list[str]]] = [
            [_wrap(cell, fonts.small, col_w - 12) or [""] for cell in row]
            for row in norm
        ]
        row_heights = [max(len(cell) for cell in row) * lh + 8 for row in wrapped]
        height = sum(row_heights) + 12

        def draw(draw_ctx, page, y):
            top = y
            x0 = MARGIN
            x1 = MARGIN + col_w * n_cols
            cy = top
            for r_i, row in enumerate(wrapped):
                rh = row_heights[r_i]
                if r_i == 0:
                    draw_ctx.rectangle([x0, cy, x1, cy + rh], fill=(235, 235, 240))
                for c_i, cell_lines in enumerate(row):
                    cx = x0 + c_i * col_w + 6
                    font = fonts.bold if r_i == 0 else fonts.small
                    for l_i, line in enumerate(cell_lines):
                        draw_ctx.text((cx, cy + 4 + l_i * lh), line,
                                      font=font, fill=(30, 30, 30))
                draw_ctx.line([(x0, cy), (x1, cy)], fill=(120, 120, 120))
                cy += rh
            draw_ctx.line([(x0, cy), (x1, cy)], fill=(120, 120, 120))
            for c_i in range(n_cols + 1):
                cx = x0 + c_i * col_w
                draw_ctx.line([(cx, top), (cx, cy)], fill=(120, 120, 120))

        self.blocks.append(_Block(height=height, draw=draw))

    # -- pagination -------------------------------------------------------------

    def paginate(self) -> list[Image.Image]:
        pages: list[Image.Image] = []
        usable = PAGE_SIZE[1] - 2 * MARGIN

        def new_page():
            page = Image.new("RGB", PAGE_SIZE, "white")
            pages.append(page)
            return page, ImageDraw.Draw(page), MARGIN

        page, draw_ctx, y = new_page()
        for block in self.blocks:
            if y + block.height > MARGIN + usable and y > MARGIN:
                page, draw_ctx, y = new_page()
            block.draw(draw_ctx, page, y)
            y += block.height
        return pages


# -- markdown token walk ------------------------------------------------------------


def _inline_text(token) -> str:
    if token is None:
        return ""
    parts = []
    for child in token.children or []:
        if child.type == "text":
            parts.append(child.content)
        elif child.type == "code_inline":
            parts.append(child.content)
        elif child.type == "softbreak":
            parts.append(" ")
        elif child.type == "link_open":
            pass
        elif child.type == "image":
            continue
    return "".join(parts).strip()


def _inline_images(token) -> list[tuple[str, str]]:
    out = []
    for child in token.children or []:
        if child.type == "image":
            out.append((child.attrGet("src") or "", _inline_text(child) or
                        (child.children[0].content if child.children else "")))
    return out


def _build_layout(markdown: str, title: str, resolve_asset) -> _Layout:
    fonts = _get_fonts()
    md = MarkdownIt("commonmark").enable("table")
    tokens = md.parse(markdown)
    layout = _Layout(title)

    saw_heading = False
    list_depth = 0
    ordered_counters: list[int] = []
    quote_depth = 0
    table_rows: list[list[str]] | None = None
    current_row: list[str] | None = None

    i = 0
    while i < len(tokens):
        token = tokens[i]
        t = token.type
        if t == "heading_open":
            level = int(token.tag[1])
            inline = tokens[i + 1]
            layout.add_text(_inline_text(inline), fonts.h[min(level, 6)], gap=12)
            saw_heading = True
            i += 3
            continue
        if t == "paragraph_open":
            inline = tokens[i + 1]
            text = _inline_text(inline)
            indent = list_depth * 24 + quote_depth * 20
            if text:
                prefix = "> " * quote_depth
                layout.add_text(prefix + text, fonts.body, indent=indent)
            for src, alt in _inline_images(inline):
                if src.startswith(("http://", "https://")):
                    layout.add_placeholder(src, alt)
                else:
                    layout.add_image(resolve_asset(src), alt)
            i += 3
            continue
        if t == "bullet_list_open" or t == "ordered_list_open":
            list_depth += 1
            ordered_counters.append(0 if t == "ordered_list_open" else -1)
            i += 1
            continue
        if t in ("bullet_list_close", "ordered_list_close"):
            list_depth = max(0, list_depth - 1)
            ordered_counters.pop()
            i += 1
            continue
        if t == "list_item_open":
            # find the first inline of the item for the marker line
            if ordered_counters and ordered_counters[-1] >= 0:
                ordered_counters[-1] += 1
                marker = f"{ordered_counters[-1]}."
            else:
                marker = "\u2022"
            j = i + 1
            while j < len(tokens) and tokens[j].type not in ("inline", "list_item_close"):
                j += 1
            if j < len(tokens) and tokens[j].type == "inline":
                text = _inline_text(tokens[j])
                layout.add_text(f"{marker} {text}", fonts.body,
                                indent=(list_depth - 1) * 24, gap=4)
                for src, alt in _inline_images(tokens[j]):
                    if src.startswith(("http://", "https://")):
                        layout.add_placeholder(src, alt)
                    else:
                        layout.add_image(resolve_asset(src), alt)
                i = j + 1
                continue
            i += 1
            continue
        if t == "fence" or t == "code_block":
            layout.add_code(token.content)
            i += 1
            continue
        if t == "hr":
            layout.add_rule()
            i += 1
            continue
        if t == "blockquote_open":
            quote_depth += 1
            i += 1
            continue
        if t == "blockquote_close":
            quote_depth = max(0, quote_depth - 1)
            i += 1
            continue
        if t == "table_open":
            table_rows = []
            i += 1
            continue
        if t == "tr_open":
            current_row = []
            i += 1
            continue
        if t in ("th_open", "td_open"):
            inline = tokens[i + 1]
            if inline.type == "inline" and current_row is not None:
                current_row.append(_inline_text(inline))
                i += 3
                continue
            i += 1
            continue
        if t == "tr_close":
            if table_rows is not None and current_row:
                table_rows.append(current_row)
            current_row = None
            i += 1
            continue
        if t == "table_close":
            if table_rows:
                layout.add_table(table_rows)
            table_rows = None
            i += 1
            continue
        i += 1

    if not saw_heading:
        # untitled document: synthesize a title page heading
        body_blocks = layout.blocks
        layout.blocks = []
        layout.add_text(title, fonts.h[1], gap=12)
        layout.blocks.extend(body_blocks)
    return layout


@dataclass
class CompiledReport:
    pdf_path: str
    page_paths: list[str]

    @property
    def page_count(self) -> int:
        return len(self.page_paths)


def _normalize_pdf_dates(path: str) -> None:
    """Rewrite creation/mod dates to a constant of identical length."""
    with open(path, "rb") as fh:
        data = fh.read()
    data = re.sub(rb"D:\d{14}Z", _FIXED_PDF_DATE, data)
    with open(path, "wb") as fh:
        fh.write(data)


def compile_report(bundle: ReportBundle, out_dir: str | None = None) -> CompiledReport:
    """Render a bundle's report.md to a PDF plus per-page PNG rasters."""
    out_dir = out_dir or os.path.join(bundle.root, "compiled")
    pages_dir = os.path.join(out_dir, "pages")
    os.makedirs(pages_dir, exist_ok=True)

    try:
        text = bundle.report_text()
    except OSError as exc:
        raise CompileError(f"cannot read report: {exc}") from exc
    title = ""
    if os.path.exists(bundle.meta_path):
        title = bundle.meta().get("question_text", "") or bundle.meta().get("question_id", "")
    title = title or os.path.basename(bundle.root.rstrip("/"))

    def resolve_asset(src: str) -> Image.Image:
        path = os.path.normpath(os.path.join(bundle.root, src))
        try:
            with Image.open(path) as im:
                return im.convert("RGB").copy()
        except (OSError, UnidentifiedImageError) as exc:
            raise CompileError(f"unreadable asset {src}: {exc}") from exc

    layout = _build_layout(text, title, resolve_asset)
    if not layout.blocks:
        fonts = _get_fonts()
        layout.add_text(title, fonts.h[1], gap=12)
    pages = layout.paginate()

    page_paths = []
    for n, page in enumerate(pages, start=1):
        page_path = os.path.join(pages_dir, f"page-{n:03d}.png")
        page.save(page_path, format="PNG")
        page_paths.append(page_path)

    pdf_path = os.path.join(out_dir, "report.pdf")
    first, rest = pages[0], pages[1:]
    first.save(pdf_path, save_all=True, append_images=rest, resolution=96)
    _normalize_pdf_dates(pdf_path)
    return CompiledReport(pdf_path=pdf_path, page_paths=page_paths)
