"""
Visual styling constants for the results deck.
"""

# Colors (hex without #, for RGBColor.from_string)
COLORS = {
    "primary": "0088CC",       # headers, table header fill
    "secondary": "FF6B35",     # accents, scatter markers
    "background": "FFFFFF",
    "text_dark": "1A1A2E",     # body text
    "text_light": "666666",    # subtitles
    "row_alt": "F8F9FA",       # alternate table rows
    "white": "FFFFFF",         # text on colored backgrounds
    "muted": "6C757D",         # undefined metric cells
}

# Fonts
FONTS = {
    "title": "Arial",
    "body": "Arial",
    "mono": "Consolas",
}

# Font sizes (points)
SIZES = {
    "title": 40,
    "subtitle": 22,
    "heading": 30,
    "table": 12,
    "small": 11,
}

# Slide dimensions (16:9 aspect ratio in inches)
DIMS = {
    "width": 13.333,
    "height": 7.5,
    "margin": 0.5,
}
