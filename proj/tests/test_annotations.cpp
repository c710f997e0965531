#include <set>

#include "doctest.h"
#include "td/annotations.hpp"
#include "td/errors.hpp"
#include "td/rng.hpp"

using namespace td;

namespace {

const char* kFixtureXml = R"(<?xml version="1.0"?>
<annotation>
  <filename>t.png</filename>
  <size><width>100</width><height>100</height><depth>3</depth></size>
  <object>
    <name>table row</name>
    <bndbox><xmin>0</xmin><ymin>10</ymin><xmax>100</xmax><ymax>20</ymax></bndbox>
  </object>
  <object>
    <name>table column</name>
    <bndbox><xmin>30</xmin><ymin>0</ymin><xmax>40</xmax><ymax>100</ymax></bndbox>
  </object>
</annotation>
)";

}  // namespace

TEST_CASE("parse_voc_xml reads the fixture with one row and one column") {
    VocParseResult r = parse_voc_xml(kFixtureXml);
    REQUIRE(r.annotation.rows.size() == 1);
    REQUIRE(r.annotation.columns.size() == 1);
    CHECK(r.annotation.image_width == 100);
    CHECK(r.annotation.image_height == 100);
    CHECK(r.annotation.rows[0] == Box{0, 10, 100, 20});
    CHECK(r.annotation.columns[0] == Box{30, 0, 40, 100});
    CHECK(r.unknown_objects == 0);
}

TEST_CASE("parse_voc_xml: zero objects is a valid empty annotation") {
    VocParseResult r = parse_voc_xml(
        "<annotation><size><width>50</width><height>60</height></size></annotation>");
    CHECK(r.annotation.rows.empty());
    CHECK(r.annotation.columns.empty());
    CHECK(r.annotation.image_width == 50);
    CHECK(r.annotation.image_height == 60);
}

TEST_CASE("parse_voc_xml counts unknown object names") {
    VocParseResult r = parse_voc_xml(R"(<annotation>
      <size><width>50</width><height>50</height></size>
      <object><name>table spanning cell</name>
        <bndbox><xmin>1</xmin><ymin>1</ymin><xmax>2</xmax><ymax>2</ymax></bndbox></object>
      <object><name>table row</name>
        <bndbox><xmin>0</xmin><ymin>5</ymin><xmax>50</xmax><ymax>9</ymax></bndbox></object>
    </annotation>)");
    CHECK(r.unknown_objects == 1);
    CHECK(r.annotation.rows.size() == 1);
}

TEST_CASE("parse_voc_xml errors") {
    // invariant violation: xmax < xmin
    CHECK_THROWS_AS(parse_voc_xml(R"(<annotation>
      <size><width>50</width><height>50</height></size>
      <object><name>table row</name>
        <bndbox><xmin>30</xmin><ymin>1</ymin><xmax>10</xmax><ymax>5</ymax></bndbox></object>
    </annotation>)"),
                    ValidationError);
    // box outside image bounds
    CHECK_THROWS_AS(parse_voc_xml(R"(<annotation>
      <size><width>50</width><height>50</height></size>
      <object><name>table row</name>
        <bndbox><xmin>0</xmin><ymin>10</ymin><xmax>80</xmax><ymax>20</ymax></bndbox></object>
    </annotation>)"),
                    ValidationError);
    // missing size
    CHECK_THROWS_AS(parse_voc_xml("<annotation></annotation>"), ValidationError);
    // malformed XML carries a byte offset
    try {
        parse_voc_xml("<annotation><size></annotation>");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.offset > 0);
        CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }
}

TEST_CASE("parse_voc_xml handles entities and sorts bands") {
    VocParseResult r = parse_voc_xml(R"(<annotation>
      <size><width>50</width><height>50</height></size>
      <object><name>table&#32;row</name>
        <bndbox><xmin>0</xmin><ymin>30</ymin><xmax>50</xmax><ymax>34</ymax></bndbox></object>
      <object><name>table row</name>
        <bndbox><xmin>0</xmin><ymin>5</ymin><xmax>50</xmax><ymax>9</ymax></bndbox></object>
    </annotation>)");
    REQUIRE(r.annotation.rows.size() == 2);
    CHECK(r.annotation.rows[0].ymin == 5);  // sorted by ymin
    CHECK(r.annotation.rows[1].ymin == 30);
}

TEST_CASE("voc_xml round-trips through the parser exactly") {
    StructureConstraints c;
    c.image_width = c.image_height = 80;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        TableAnnotation y = random_structure(seed, c);
        VocParseResult r = parse_voc_xml(voc_xml(y, "x.png"));
        CHECK(r.annotation == y);
    }
}

TEST_CASE("render_mask: single row box area") {
    TableAnnotation y;
    y.image_width = y.image_height = 100;
    y.rows.push_back({0, 10, 100, 20});
    StructureMask m = render_mask(y, 100, 100);
    CHECK(m.count_ones() == 1000);
    // all ones lie inside the band
    for (int yy = 0; yy < 100; ++yy)
        for (int xx = 0; xx < 100; ++xx)
            CHECK(m.at(yy, xx) == ((yy >= 10 && yy < 20) ? 1 : 0));
}

TEST_CASE("render_mask: union of overlapping bands stays binary") {
    TableAnnotation y;
    y.image_width = y.image_height = 100;
    y.rows.push_back({0, 10, 100, 20});
    y.columns.push_back({30, 0, 40, 100});
    StructureMask m = render_mask(y, 100, 100);
    for (uint8_t b : m.bits) CHECK(b <= 1);
    // row area + column area - overlap
    CHECK(m.count_ones() == 1000 + 1000 - 100);
}

TEST_CASE("render_mask: empty annotation gives an all-zero mask") {
    TableAnnotation y;
    y.image_width = y.image_height = 64;
    CHECK(render_mask(y, 64, 64).count_ones() == 0);
}

TEST_CASE("render_mask scales per axis with half-up rounding") {
    TableAnnotation y;
    y.image_width = y.image_height = 100;
    y.rows.push_back({0, 10, 100, 20});
    StructureMask m = render_mask(y, 50, 50);  // rows 5..10 at half resolution
    CHECK(m.count_ones() == 5 * 50);
    CHECK(m.at(5, 0) == 1);
    CHECK(m.at(9, 0) == 1);
    CHECK(m.at(4, 0) == 0);
    CHECK(m.at(10, 0) == 0);
}

TEST_CASE("render_mask is monotone and decomposes as a union") {
    StructureConstraints c;
    c.image_width = c.image_height = 64;
    TableAnnotation y = random_structure(99, c);
    StructureMask all = render_mask(y, 64, 64);

    TableAnnotation rows_only = y;
    rows_only.columns.clear();
    StructureMask rows_mask = render_mask(rows_only, 64, 64);
    // monotone: adding boxes never clears a pixel
    for (size_t i = 0; i < all.bits.size(); ++i)
        if (rows_mask.bits[i]) CHECK(all.bits[i] == 1);

    // union decomposition: OR of single-box masks equals the full mask
    std::vector<uint8_t> acc(all.bits.size(), 0);
    auto add_single = [&](const Box& b, bool is_row) {
        TableAnnotation single;
        single.image_width = single.image_height = 64;
        (is_row ? single.rows : single.columns).push_back(b);
        StructureMask sm = render_mask(single, 64, 64);
        for (size_t i = 0; i < acc.size(); ++i) acc[i] |= sm.bits[i];
    };
    for (const Box& b : y.rows) add_single(b, true);
    for (const Box& b : y.columns) add_single(b, false);
    CHECK(acc == all.bits);
}

TEST_CASE("random_structure honors forced counts and determinism") {
    StructureConstraints c;
    c.image_width = c.image_height = 64;
    c.rows_min = c.rows_max = 3;
    c.cols_min = c.cols_max = 2;
    TableAnnotation a = random_structure(5, c);
    CHECK(a.rows.size() == 3);
    CHECK(a.columns.size() == 2);
    CHECK(random_structure(5, c) == a);
    CHECK(!(random_structure(6, c) == a));
}

TEST_CASE("random_structure covers the whole count range over many seeds") {
    StructureConstraints c;
    c.image_width = c.image_height = 256;
    c.rows_min = 2;
    c.rows_max = 8;
    std::set<size_t> seen;
    for (uint64_t seed = 0; seed < 1000; ++seed) seen.insert(random_structure(seed, c).rows.size());
    CHECK(seen == std::set<size_t>{2, 3, 4, 5, 6, 7, 8});
}

TEST_CASE("random_structure names the violated capacity") {
    StructureConstraints c;
    c.image_width = c.image_height = 32;
    c.rows_min = c.rows_max = 8;
    c.thickness_min = c.thickness_max = 3;
    c.min_gap = 8;
    try {
        random_structure(1, c);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("need") != std::string::npos);
    }
}

TEST_CASE("generate_toy_table is deterministic and consistent with its annotation") {
    StructureConstraints c;
    c.image_width = c.image_height = 64;
    TableAnnotation y = random_structure(11, c);
    Image a = generate_toy_table(y, 7);
    Image b = generate_toy_table(y, 7);
    CHECK(a.data == b.data);
    Image d = generate_toy_table(y, 8);
    CHECK(a.data != d.data);
}

TEST_CASE("empty annotation generates a page without separators") {
    TableAnnotation y;
    y.image_width = y.image_height = 64;
    Image img = generate_toy_table(y, 3);
    TableAnnotation found = extract_structure(img);
    CHECK(found.rows.empty());
    CHECK(found.columns.empty());
}

TEST_CASE("extract_structure: blank page gives an empty annotation") {
    Image blank(3, 64, 64, 1.0f);
    TableAnnotation found = extract_structure(blank);
    CHECK(found.rows.empty());
    CHECK(found.columns.empty());
}

TEST_CASE("extract_structure finds a constructed dark band exactly") {
    Image img(3, 100, 100, 0.98f);
    for (int c = 0; c < 3; ++c)
        for (int y = 50; y < 54; ++y)
            for (int x = 0; x < 100; ++x) img.at(c, y, x) = 0.1f;
    TableAnnotation found = extract_structure(img);
    REQUIRE(found.rows.size() == 1);
    CHECK(found.rows[0].ymin == 50);
    CHECK(found.rows[0].ymax == 54);
    CHECK(found.columns.empty());
}

TEST_CASE("toy-table round trip recovers row/column counts under the preconditions") {
    StructureConstraints c;
    c.image_width = c.image_height = 64;
    c.thickness_min = 2;  // extractor precondition: thickness >= 2, gaps >= 8
    c.min_gap = 8;
    for (uint64_t seed = 0; seed < 30; ++seed) {
        TableAnnotation y = random_structure(seed, c);
        Image img = generate_toy_table(y, Rng::mix(seed, 99));
        TableAnnotation found = extract_structure(img);
        CHECK(found.rows.size() == y.rows.size());
        CHECK(found.columns.size() == y.columns.size());
    }
}

TEST_CASE("mask image round trip") {
    StructureConstraints c;
    c.image_width = c.image_height = 64;
    TableAnnotation y = random_structure(21, c);
    StructureMask m = render_mask(y, 64, 64);
    StructureMask back = image_to_mask(mask_to_image(m));
    CHECK(back.bits == m.bits);
    Image rgb = mask_to_rgb(m);
    CHECK(rgb.channels == 3);
    CHECK(image_to_mask(rgb).bits == m.bits);
}
