#include "td/annotations.hpp"

#include <algorithm>
#include <cassert>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "td/errors.hpp"
#include "td/rng.hpp"

namespace td {

namespace {

std::string box_str(const Box& b) {
    std::ostringstream os;
    os << "(" << b.xmin << "," << b.ymin << "," << b.xmax << "," << b.ymax << ")";
    return os.str();
}

// --- minimal XML subset parser -------------------------------------------------
// Elements, attributes (skipped), character data with the five standard
// entities and numeric references, comments, and the XML prolog. Enough for
// PASCAL-VOC annotation files; errors carry the byte offset.

struct XmlNode {
    std::string name;
    std::string text;
    std::vector<XmlNode> children;

    const XmlNode* child(std::string_view want) const {
        for (const auto& c : children)
            if (c.name == want) return &c;
        return nullptr;
    }
};

class XmlParser {
  public:
    explicit XmlParser(std::string_view doc) : doc_(doc) {}

    XmlNode parse_document() {
        skip_misc();
        XmlNode root = parse_element();
        skip_misc();
        if (pos_ != doc_.size()) fail("trailing content after root element");
        return root;
    }

  private:
    std::string_view doc_;
    size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, pos_); }

    bool eof() const { return pos_ >= doc_.size(); }
    char peek() const { return doc_[pos_]; }
    bool starts_with(std::string_view s) const { return doc_.substr(pos_, s.size()) == s; }

    void skip_ws() {
        while (!eof() && (peek() == ' ' || peek() == '\t' || peek() == '\n' || peek() == '\r'))
            ++pos_;
    }

    void skip_until(std::string_view end, const char* what) {
        size_t at = doc_.find(end, pos_);
        if (at == std::string_view::npos) fail(std::string("unterminated ") + what);
        pos_ = at + end.size();
    }

    // prolog, comments, doctype
    void skip_misc() {
        for (;;) {
            skip_ws();
            if (starts_with("<?")) {
                skip_until("?>", "processing instruction");
            } else if (starts_with("<!--")) {
                skip_until("-->", "comment");
            } else if (starts_with("<!")) {
                skip_until(">", "declaration");
            } else {
                return;
            }
        }
    }

    std::string parse_name() {
        size_t start = pos_;
        while (!eof()) {
            char c = peek();
            bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                      c == '_' || c == '-' || c == '.' || c == ':';
            if (!ok) break;
            ++pos_;
        }
        if (pos_ == start) fail("expected a name");
        return std::string(doc_.substr(start, pos_ - start));
    }

    void append_entity(std::string& out) {
        size_t semi = doc_.find(';', pos_);
        if (semi == std::string_view::npos || semi - pos_ > 8) fail("malformed entity reference");
        std::string_view ent = doc_.substr(pos_ + 1, semi - pos_ - 1);
        if (ent == "lt") out += '<';
        else if (ent == "gt") out += '>';
        else if (ent == "amp") out += '&';
        else if (ent == "quot") out += '"';
        else if (ent == "apos") out += '\'';
        else if (!ent.empty() && ent[0] == '#') {
            int base = 10;
            std::string_view digits = ent.substr(1);
            if (!digits.empty() && (digits[0] == 'x' || digits[0] == 'X')) {
                base = 16;
                digits = digits.substr(1);
            }
            unsigned code = 0;
            auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), code, base);
            if (ec != std::errc() || p != digits.data() + digits.size() || code > 127)
                fail("unsupported character reference");
            out += static_cast<char>(code);
        } else {
            fail("unknown entity '&" + std::string(ent) + ";'");
        }
        pos_ = semi + 1;
    }

    void skip_attributes() {
        for (;;) {
            skip_ws();
            if (eof()) fail("unexpected end of document inside tag");
            char c = peek();
            if (c == '>' || c == '/') return;
            parse_name();
            skip_ws();
            if (eof() || peek() != '=') fail("expected '=' in attribute");
            ++pos_;
            skip_ws();
            if (eof() || (peek() != '"' && peek() != '\'')) fail("expected quoted attribute value");
            char quote = peek();
            ++pos_;
            size_t end = doc_.find(quote, pos_);
            if (end == std::string_view::npos) fail("unterminated attribute value");
            pos_ = end + 1;
        }
    }

    XmlNode parse_element() {
        if (eof() || peek() != '<') fail("expected '<'");
        ++pos_;
        XmlNode node;
        node.name = parse_name();
        skip_attributes();
        if (starts_with("/>")) {
            pos_ += 2;
            return node;
        }
        if (peek() != '>') fail("expected '>'");
        ++pos_;

        for (;;) {
            if (eof()) fail("unexpected end of document inside <" + node.name + ">");
            if (starts_with("</")) {
                pos_ += 2;
                std::string closing = parse_name();
                if (closing != node.name)
                    fail("mismatched closing tag </" + closing + "> for <" + node.name + ">");
                skip_ws();
                if (eof() || peek() != '>') fail("expected '>' after closing tag");
                ++pos_;
                return node;
            }
            if (starts_with("<!--")) {
                skip_until("-->", "comment");
                continue;
            }
            if (peek() == '<') {
                node.children.push_back(parse_element());
                continue;
            }
            if (peek() == '&') {
                append_entity(node.text);
                continue;
            }
            node.text += peek();
            ++pos_;
        }
    }
};

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

int parse_pixel_value(const XmlNode& parent, const char* field) {
    const XmlNode* n = parent.child(field);
    if (!n) throw ValidationError(std::string("missing <") + field + "> element");
    std::string t(trim(n->text));
    if (t.empty()) throw ValidationError(std::string("empty <") + field + "> element");
    char* end = nullptr;
    double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size())
        throw ValidationError(std::string("cannot parse <") + field + "> value '" + t + "'");
    return static_cast<int>(std::llround(v));
}

void validate_box(const Box& b, int w, int h) {
    if (!(0 <= b.xmin && b.xmin < b.xmax && b.xmax <= w && 0 <= b.ymin && b.ymin < b.ymax &&
          b.ymax <= h))
        throw ValidationError("box " + box_str(b) + " invalid for image " + std::to_string(w) +
                              "x" + std::to_string(h));
}

}  // namespace

void TableAnnotation::validate() const {
    if (image_width <= 0 || image_height <= 0)
        throw ValidationError("annotation has non-positive image dimensions");
    for (const Box& b : rows) validate_box(b, image_width, image_height);
    for (const Box& b : columns) validate_box(b, image_width, image_height);
    for (size_t i = 1; i < rows.size(); ++i)
        if (rows[i].ymin < rows[i - 1].ymin) throw ValidationError("rows not sorted by ymin");
    for (size_t i = 1; i < columns.size(); ++i)
        if (columns[i].xmin < columns[i - 1].xmin)
            throw ValidationError("columns not sorted by xmin");
}

size_t StructureMask::count_ones() const {
    size_t n = 0;
    for (uint8_t b : bits) n += b;
    return n;
}

VocParseResult parse_voc_xml(std::string_view document) {
    XmlParser parser(document);
    XmlNode root = parser.parse_document();
    if (root.name != "annotation")
        throw ValidationError("root element is <" + root.name + ">, expected <annotation>");

    const XmlNode* size = root.child("size");
    if (!size) throw ValidationError("missing <size> element");

    VocParseResult result;
    TableAnnotation& y = result.annotation;
    y.image_width = parse_pixel_value(*size, "width");
    y.image_height = parse_pixel_value(*size, "height");
    if (y.image_width <= 0 || y.image_height <= 0)
        throw ValidationError("non-positive image size in <size>");

    for (const XmlNode& child : root.children) {
        if (child.name != "object") continue;
        const XmlNode* name = child.child("name");
        if (!name) throw ValidationError("object without <name>");
        const XmlNode* bnd = child.child("bndbox");
        if (!bnd) throw ValidationError("object without <bndbox>");
        Box b;
        b.xmin = parse_pixel_value(*bnd, "xmin");
        b.ymin = parse_pixel_value(*bnd, "ymin");
        b.xmax = parse_pixel_value(*bnd, "xmax");
        b.ymax = parse_pixel_value(*bnd, "ymax");
        validate_box(b, y.image_width, y.image_height);
        std::string cls(trim(name->text));
        if (cls == "table row")
            y.rows.push_back(b);
        else if (cls == "table column")
            y.columns.push_back(b);
        else
            ++result.unknown_objects;
    }
    std::stable_sort(y.rows.begin(), y.rows.end(),
                     [](const Box& a, const Box& b) { return a.ymin < b.ymin; });
    std::stable_sort(y.columns.begin(), y.columns.end(),
                     [](const Box& a, const Box& b) { return a.xmin < b.xmin; });
    return result;
}

VocParseResult parse_voc_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open annotation file: " + path.string());
    std::string doc((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_voc_xml(doc);
}

std::string voc_xml(const TableAnnotation& y, std::string_view filename) {
    y.validate();
    std::ostringstream os;
    os << "<annotation>\n";
    os << "  <filename>" << filename << "</filename>\n";
    os << "  <size>\n";
    os << "    <width>" << y.image_width << "</width>\n";
    os << "    <height>" << y.image_height << "</height>\n";
    os << "    <depth>3</depth>\n";
    os << "  </size>\n";
    auto emit = [&os](const Box& b, const char* cls) {
        os << "  <object>\n";
        os << "    <name>" << cls << "</name>\n";
        os << "    <bndbox>\n";
        os << "      <xmin>" << b.xmin << "</xmin>\n";
        os << "      <ymin>" << b.ymin << "</ymin>\n";
        os << "      <xmax>" << b.xmax << "</xmax>\n";
        os << "      <ymax>" << b.ymax << "</ymax>\n";
        os << "    </bndbox>\n";
        os << "  </object>\n";
    };
    for (const Box& b : y.rows) emit(b, "table row");
    for (const Box& b : y.columns) emit(b, "table column");
    os << "</annotation>\n";
    return os.str();
}

StructureMask render_mask(const TableAnnotation& y, int height, int width) {
    if (height <= 0 || width <= 0) throw ValidationError("render_mask: target size must be positive");
    y.validate();
    StructureMask m;
    m.height = height;
    m.width = width;
    m.bits.assign(static_cast<size_t>(height) * width, 0);

    double sx = static_cast<double>(width) / y.image_width;
    double sy = static_cast<double>(height) / y.image_height;
    auto half_up = [](double v) { return static_cast<int>(std::floor(v + 0.5)); };

    auto fill = [&](const Box& b) {
        int x0 = std::clamp(half_up(b.xmin * sx), 0, width);
        int x1 = std::clamp(half_up(b.xmax * sx), 0, width);
        int y0 = std::clamp(half_up(b.ymin * sy), 0, height);
        int y1 = std::clamp(half_up(b.ymax * sy), 0, height);
        for (int yy = y0; yy < y1; ++yy)
            for (int xx = x0; xx < x1; ++xx) m.bits[static_cast<size_t>(yy) * width + xx] = 1;
    };
    for (const Box& b : y.rows) fill(b);
    for (const Box& b : y.columns) fill(b);
    return m;
}

Image mask_to_image(const StructureMask& m) {
    Image img(1, m.height, m.width);
    for (size_t i = 0; i < m.bits.size(); ++i) img.data[i] = m.bits[i] ? 1.0f : 0.0f;
    return img;
}

Image mask_to_rgb(const StructureMask& m) { return to_rgb(mask_to_image(m)); }

StructureMask image_to_mask(const Image& img, float threshold) {
    Image gray = to_grayscale(img);
    StructureMask m;
    m.height = gray.height;
    m.width = gray.width;
    m.bits.resize(gray.data.size());
    for (size_t i = 0; i < gray.data.size(); ++i) m.bits[i] = gray.data[i] >= threshold ? 1 : 0;
    return m;
}

namespace {

// Places `count` bands of the given thicknesses inside [margin, extent-margin]
// with at least min_gap between them, distributing the leftover space by the
// rng's weights. Returns [start, end) intervals in order.
std::vector<std::pair<int, int>> place_bands(Rng& rng, int extent, int margin, int min_gap,
                                             const std::vector<int>& thicknesses) {
    int n = static_cast<int>(thicknesses.size());
    int span = extent - 2 * margin;
    int need = 0;
    for (int t : thicknesses) need += t;
    need += (n - 1) * min_gap;

    int leftover = span - need;
    std::vector<double> weights(n + 1);
    double total = 0;
    for (auto& w : weights) {
        w = rng.uniform();
        total += w;
    }
    std::vector<int> extra(n + 1, 0);
    if (total > 0) {
        for (int i = 0; i <= n; ++i)
            extra[i] = static_cast<int>(std::floor(weights[i] / total * leftover));
    }

    std::vector<std::pair<int, int>> bands;
    int cur = margin + extra[0];
    for (int i = 0; i < n; ++i) {
        bands.emplace_back(cur, cur + thicknesses[i]);
        cur += thicknesses[i];
        if (i + 1 < n) cur += min_gap + extra[i + 1];
    }
    return bands;
}

void check_capacity(const char* what, int extent, int margin, int min_gap, int max_count,
                    int max_thickness) {
    int worst = max_count * max_thickness + (max_count - 1) * min_gap;
    int span = extent - 2 * margin;
    if (worst > span)
        throw ValidationError(std::string("random_structure: ") + std::to_string(max_count) + " " +
                              what + " of thickness " + std::to_string(max_thickness) +
                              " with gaps " + std::to_string(min_gap) + " need " +
                              std::to_string(worst) + " px, image provides " + std::to_string(span));
}

}  // namespace

TableAnnotation random_structure(uint64_t seed, const StructureConstraints& c) {
    if (c.rows_min < 1 || c.cols_min < 1 || c.rows_min > c.rows_max || c.cols_min > c.cols_max ||
        c.thickness_min < 1 || c.thickness_min > c.thickness_max || c.margin < 0 || c.min_gap < 0)
        throw ValidationError("random_structure: invalid constraint ranges");
    check_capacity("rows", c.image_height, c.margin, c.min_gap, c.rows_max, c.thickness_max);
    check_capacity("columns", c.image_width, c.margin, c.min_gap, c.cols_max, c.thickness_max);

    Rng rng(seed);
    TableAnnotation y;
    y.image_width = c.image_width;
    y.image_height = c.image_height;

    int n_rows = static_cast<int>(rng.uniform_int(c.rows_min, c.rows_max));
    std::vector<int> row_t(n_rows);
    for (auto& t : row_t) t = static_cast<int>(rng.uniform_int(c.thickness_min, c.thickness_max));
    for (auto [a, b] : place_bands(rng, c.image_height, c.margin, c.min_gap, row_t))
        y.rows.push_back({0, a, c.image_width, b});

    int n_cols = static_cast<int>(rng.uniform_int(c.cols_min, c.cols_max));
    std::vector<int> col_t(n_cols);
    for (auto& t : col_t) t = static_cast<int>(rng.uniform_int(c.thickness_min, c.thickness_max));
    for (auto [a, b] : place_bands(rng, c.image_width, c.margin, c.min_gap, col_t))
        y.columns.push_back({a, 0, b, c.image_height});

    y.validate();
    return y;
}

namespace {

// Open intervals of [0, extent) not covered by the given bands.
std::vector<std::pair<int, int>> complement_intervals(int extent,
                                                      const std::vector<std::pair<int, int>>& bands) {
    std::vector<std::pair<int, int>> out;
    int cur = 0;
    for (auto [a, b] : bands) {
        if (a > cur) out.emplace_back(cur, a);
        cur = std::max(cur, b);
    }
    if (cur < extent) out.emplace_back(cur, extent);
    return out;
}

void fill_rect(Image& img, int y0, int y1, int x0, int x1, float v) {
    y0 = std::clamp(y0, 0, img.height);
    y1 = std::clamp(y1, 0, img.height);
    x0 = std::clamp(x0, 0, img.width);
    x1 = std::clamp(x1, 0, img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) img.at(c, y, x) = v;
}

}  // namespace

Image generate_toy_table(const TableAnnotation& y, uint64_t style_seed) {
    y.validate();
    int H = y.image_height, W = y.image_width;
    Rng rng(style_seed);

    float page = 0.96f + static_cast<float>(rng.uniform()) * 0.03f;
    float line_gray = 0.05f + static_cast<float>(rng.uniform()) * 0.25f;
    float text_gray = 0.60f + static_cast<float>(rng.uniform()) * 0.15f;
    double line_density = 0.35 + rng.uniform() * 0.30;

    Image img(3, H, W, page);

    // Separator bands drawn at full annotated thickness, so the image is
    // exactly consistent with y.
    for (const Box& r : y.rows) fill_rect(img, r.ymin, r.ymax, 0, W, line_gray);
    for (const Box& c : y.columns) fill_rect(img, 0, H, c.xmin, c.xmax, line_gray);

    std::vector<std::pair<int, int>> row_bands, col_bands;
    for (const Box& r : y.rows) row_bands.emplace_back(r.ymin, r.ymax);
    for (const Box& c : y.columns) col_bands.emplace_back(c.xmin, c.xmax);
    auto y_cells = complement_intervals(H, row_bands);
    auto x_cells = complement_intervals(W, col_bands);

    const int pad = 2;
    for (auto [cy0, cy1] : y_cells) {
        for (auto [cx0, cx1] : x_cells) {
            int x0 = cx0 + pad, x1 = cx1 - pad;
            int y0 = cy0 + pad, y1 = cy1 - pad;
            if (x1 - x0 < 4 || y1 - y0 < 3) continue;
            int cell_w = x1 - x0;
            // Pseudo-text: short glyph blobs on 2px-tall lines. Coverage per
            // line is capped so text never crosses the extractor's darkness
            // threshold; only separator bands do.
            int line_h = 2;
            int leading = 2;
            for (int ly = y0; ly + line_h <= y1; ly += line_h + leading) {
                if (rng.uniform() > line_density) continue;
                int budget = static_cast<int>(cell_w * (0.22 + rng.uniform() * 0.16));
                int x = x0 + static_cast<int>(rng.uniform_int(0, 2));
                while (budget > 0 && x < x1) {
                    int blob_w = static_cast<int>(rng.uniform_int(2, 5));
                    blob_w = std::min(blob_w, x1 - x);
                    float g = text_gray + static_cast<float>(rng.uniform() - 0.5) * 0.16f;
                    fill_rect(img, ly, ly + line_h, x, x + blob_w, g);
                    budget -= blob_w;
                    x += blob_w + 1 + static_cast<int>(rng.uniform_int(0, 2));
                }
            }
        }
    }
    return img;
}

TableAnnotation extract_structure(const Image& img, const ExtractorConfig& cfg) {
    Image gray = to_grayscale(img);
    int H = gray.height, W = gray.width;

    auto profile_runs = [&cfg](const std::vector<double>& darkness) {
        std::vector<double> sorted = darkness;
        std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
        double median = sorted[sorted.size() / 2];
        double threshold = median + cfg.tau_dark;

        std::vector<std::pair<int, int>> runs;
        int start = -1;
        for (int i = 0; i <= static_cast<int>(darkness.size()); ++i) {
            bool on = i < static_cast<int>(darkness.size()) && darkness[i] > threshold;
            if (on && start < 0) start = i;
            if (!on && start >= 0) {
                if (i - start >= cfg.min_run) runs.emplace_back(start, i);
                start = -1;
            }
        }
        return runs;
    };

    std::vector<double> row_dark(H, 0.0);
    for (int y = 0; y < H; ++y) {
        double s = 0;
        for (int x = 0; x < W; ++x) s += gray.at(0, y, x);
        row_dark[y] = 1.0 - s / W;
    }
    std::vector<double> col_dark(W, 0.0);
    for (int x = 0; x < W; ++x) {
        double s = 0;
        for (int y = 0; y < H; ++y) s += gray.at(0, y, x);
        col_dark[x] = 1.0 - s / H;
    }

    TableAnnotation out;
    out.image_width = W;
    out.image_height = H;
    for (auto [a, b] : profile_runs(row_dark)) out.rows.push_back({0, a, W, b});
    for (auto [a, b] : profile_runs(col_dark)) out.columns.push_back({a, 0, b, H});
    return out;
}

}  // namespace td
