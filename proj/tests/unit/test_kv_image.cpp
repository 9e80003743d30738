#include "helpers.hpp"

#include "strata/checkpoint.hpp"
#include "strata/image.hpp"
#include "strata/kv.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace strata;

TEST(Kv, RecordRoundTripKeepsOrderAndValues) {
    kv::Record r;
    r.set("b", "two words").set("a", 3).set("x", 0.1).set("flag", true);
    const auto back = kv::Record::parse(r.to_line());
    ASSERT_EQ(back.fields().size(), 4u);
    EXPECT_EQ(back.fields()[0].first, "b");
    EXPECT_EQ(back.get("b"), "two words");
    EXPECT_EQ(back.get_int("a"), 3);
    EXPECT_EQ(back.get_double("x"), 0.1);
    EXPECT_TRUE(back.get_bool("flag"));
    EXPECT_THROW(back.get("missing"), std::out_of_range);
}

TEST(Kv, DoublesRoundTripExactly) {
    const std::vector<double> v{0.1, -1e-300, 1.0 / 3.0, 12345.678, 0.0};
    EXPECT_EQ(kv::parse_doubles(kv::join_doubles(v)), v);
}

TEST(Kv, ConfigFileSkipsCommentsAndBlankLines) {
    test::TempDir dir("kv");
    {
        std::ofstream f(dir / "c.cfg");
        f << "# comment\n\nvq.lr = 1e-4\nmanifest=data/m.txt  # trailing\n";
    }
    const auto m = kv::read_config_file((dir / "c.cfg").string());
    EXPECT_EQ(m.at("vq.lr"), "1e-4");
    EXPECT_EQ(m.at("manifest"), "data/m.txt");
    EXPECT_EQ(m.size(), 2u);
}

TEST(Image, PngRoundTripIsLosslessAtEightBits) {
    Image img(32, 32);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = from_byte(static_cast<std::uint8_t>((y * 7 + x * 3 + c * 50) % 256));
    const auto back = decode_png(encode_png(img));
    EXPECT_EQ(back, img);
}

TEST(Image, FlipIsAnInvolution) {
    Image img(32, 32);
    img.at(3, 0, 1) = 0.5f;
    const auto f = img.flipped_horizontal();
    EXPECT_EQ(f.at(3, 31, 1), 0.5f);
    EXPECT_EQ(f.flipped_horizontal(), img);
}

TEST(Image, ValidateRejectsNonPowerOfTwoAndOutOfRange) {
    EXPECT_THROW(Image(30, 30).validate(), std::invalid_argument);
    Image img(32, 32);
    img.at(0, 0, 0) = 1.5f;
    EXPECT_THROW(img.validate(), std::invalid_argument);
}

TEST(Checkpoint, SerializeRoundTripAndCorruption) {
    Checkpoint c;
    c.set_meta("kind", "vq");
    c.set_meta("epoch", "3");
    c.tensors["w"] = NamedTensor{{2, 3}, {1, 2, 3, 4, 5, 6}};
    const auto bytes = c.serialize();
    const auto back = Checkpoint::deserialize(bytes);
    EXPECT_EQ(back.meta("kind"), "vq");
    EXPECT_EQ(back.epoch(), 3);
    EXPECT_EQ(back.tensors.at("w").values, c.tensors.at("w").values);
    EXPECT_EQ(back.id(), c.id());

    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    EXPECT_THROW(Checkpoint::deserialize(truncated), std::runtime_error);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(Checkpoint::deserialize(bad_magic), std::runtime_error);
}
