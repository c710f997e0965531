#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "td/image.hpp"

namespace td {

// Pixel box, inclusive-min / exclusive-max.
struct Box {
    int xmin = 0, ymin = 0, xmax = 0, ymax = 0;
    int width() const { return xmax - xmin; }
    int height() const { return ymax - ymin; }
    bool operator==(const Box&) const = default;
};

// Ground-truth table structure: ordered row and column bands.
// Invariants: rows sorted by ymin, columns by xmin, every box inside
// [0,W)x[0,H). validate() enforces them.
struct TableAnnotation {
    int image_width = 0;
    int image_height = 0;
    std::vector<Box> rows;     // full-width bands
    std::vector<Box> columns;  // full-height bands

    void validate() const;
    bool operator==(const TableAnnotation&) const = default;
};

// Binary conditioning mask m = g(y): 1 inside any (scaled) row/column band.
struct StructureMask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> bits;  // row-major, values 0/1

    uint8_t at(int y, int x) const { return bits[static_cast<size_t>(y) * width + x]; }
    size_t count_ones() const;
};

// --- PASCAL-VOC-style XML ----------------------------------------------------

struct VocParseResult {
    TableAnnotation annotation;
    int unknown_objects = 0;  // object entries whose name was neither row nor column
};

// Parses annotation/size/{width,height} and object/{name,bndbox} entries.
// Objects named "table row" / "table column" become rows/columns; anything
// else is counted in unknown_objects. Malformed XML raises ParseError with a
// byte offset; invalid boxes raise ValidationError.
VocParseResult parse_voc_xml(std::string_view document);
VocParseResult parse_voc_file(const std::filesystem::path& path);

// Emits the same schema parse_voc_xml consumes; round-trips exactly.
std::string voc_xml(const TableAnnotation& y, std::string_view filename);

// --- mask mapping g ----------------------------------------------------------

// Boxes scale from annotation dimensions to (H, W) by independent per-axis
// ratios with half-up rounding; a pixel is 1 iff it lies in at least one
// scaled band.
StructureMask render_mask(const TableAnnotation& y, int height, int width);

Image mask_to_image(const StructureMask& m);              // 1-channel, {0,1} -> {0,1}
Image mask_to_rgb(const StructureMask& m);                // 3 identical channels
StructureMask image_to_mask(const Image& img, float threshold = 0.5f);

// --- procedural structures and toy tables ------------------------------------

struct StructureConstraints {
    int image_width = 64;
    int image_height = 64;
    int rows_min = 2, rows_max = 5;
    int cols_min = 2, cols_max = 4;
    int margin = 4;       // no band starts closer than this to the border
    int min_gap = 8;      // minimum clear space between adjacent bands
    int thickness_min = 2;
    int thickness_max = 3;
};

// Deterministic in `seed`. Throws ValidationError naming the violated
// capacity when the constraint maxima cannot fit.
TableAnnotation random_structure(uint64_t seed, const StructureConstraints& c);

// White page, dark separator bands exactly where y has row/column boxes, and
// pseudo-text glyph blobs inside the cells. style_seed drives line/text gray
// levels, blob density and jitter. The output is consistent with y by
// construction. Text stays light and sparse enough that only separator bands
// cross the extractor's darkness threshold.
Image generate_toy_table(const TableAnnotation& y, uint64_t style_seed);

struct ExtractorConfig {
    double tau_dark = 0.25;  // threshold above the page-median darkness
    int min_run = 2;         // minimum band height/width in pixels
};

// Projection-profile detector: maximal runs of rows (columns) whose darkness
// profile exceeds the page median by tau_dark become full-width (full-height)
// bands. Blank image -> empty annotation.
TableAnnotation extract_structure(const Image& img, const ExtractorConfig& cfg = {});

}  // namespace td
