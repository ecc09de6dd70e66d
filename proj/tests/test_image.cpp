#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mcan/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <vector>

using namespace mcan;

namespace {

std::mt19937_64 rng(0xadd1c7);

Image random_image(int w, int h) {
    Image img(w, h);
    for (auto& p : img.pixels) p = static_cast<uint8_t>(rng() % 256);
    return img;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("mcan_img_" + std::to_string(rng()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

// writes a PNG through libpng directly, for formats save_png never produces
void write_raw_png(const std::string& path, int w, int h, int bit_depth, int color_type) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    REQUIRE(fp);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    REQUIRE(setjmp(png_jmpbuf(png)) == 0);
    png_init_io(png, fp);
    png_set_IHDR(png, info, w, h, bit_depth, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    int channels = color_type == PNG_COLOR_TYPE_RGB ? 3
                   : color_type == PNG_COLOR_TYPE_RGBA ? 4 : 1;
    std::vector<uint8_t> row(static_cast<size_t>(w) * channels * (bit_depth / 8), 42);
    for (int y = 0; y < h; ++y) png_write_row(png, row.data());
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

}  // namespace

TEST_CASE("png round-trip is lossless") {
    TempDir dir;
    Image img = random_image(13, 9);
    save_png(img, dir.file("a.png"));
    Image back = load_png(dir.file("a.png"));
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.pixels == img.pixels);
}

TEST_CASE("grayscale PNGs replicate to three channels") {
    TempDir dir;
    write_raw_png(dir.file("gray.png"), 5, 4, 8, PNG_COLOR_TYPE_GRAY);
    Image img = load_png(dir.file("gray.png"));
    CHECK(img.width == 5);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            CHECK(img.at(x, y, 0) == 42);
            CHECK(img.at(x, y, 0) == img.at(x, y, 1));
            CHECK(img.at(x, y, 1) == img.at(x, y, 2));
        }
}

TEST_CASE("16-bit and alpha PNGs are rejected") {
    TempDir dir;
    write_raw_png(dir.file("deep.png"), 4, 4, 16, PNG_COLOR_TYPE_RGB);
    CHECK_THROWS_WITH_AS(load_png(dir.file("deep.png")), doctest::Contains("16-bit"),
                         FormatError);
    write_raw_png(dir.file("alpha.png"), 4, 4, 8, PNG_COLOR_TYPE_RGBA);
    CHECK_THROWS_WITH_AS(load_png(dir.file("alpha.png")), doctest::Contains("alpha"),
                         FormatError);
    CHECK_THROWS_AS(load_png(dir.file("missing.png")), FormatError);
}

TEST_CASE("to_tensor / to_image") {
    Image img(2, 1);
    img.at(0, 0, 0) = 255;
    img.at(1, 0, 2) = 128;
    Tensor t = to_tensor(img);
    CHECK(t.shape == Shape{1, 3, 1, 2});
    CHECK(t.at(0, 0, 0, 0) == 1.0f);
    CHECK(t.at(0, 2, 0, 1) == doctest::Approx(128.0f / 255.0f));

    Image back = to_image(t);
    CHECK(back.pixels == img.pixels);

    Tensor hot({1, 3, 1, 1}, 1.7f);
    CHECK(to_image(hot).at(0, 0, 0) == 255);  // clamped
    Tensor neg({1, 3, 1, 1}, -0.4f);
    CHECK(to_image(neg).at(0, 0, 0) == 0);
    Tensor half({1, 3, 1, 1}, 0.5f);
    CHECK(to_image(half).at(0, 0, 0) == 128);  // 127.5 rounds away from zero
}

TEST_CASE("rgb_to_y at the calibration points") {
    Tensor black({1, 3, 1, 1}, 0.0f);
    CHECK(rgb_to_y(black).data[0] == doctest::Approx(16.0f));
    Tensor white({1, 3, 1, 1}, 1.0f);
    CHECK(rgb_to_y(white).data[0] == doctest::Approx(235.0f));
    Tensor red({1, 3, 1, 1});
    red.at(0, 0, 0, 0) = 1.0f;
    CHECK(rgb_to_y(red).data[0] == doctest::Approx(81.481f));

    // range property on random input
    Tensor r({1, 3, 8, 8});
    for (auto& v : r.data) v = static_cast<float>(rng() % 256) / 255.0f;
    for (float y : rgb_to_y(r).data) {
        CHECK(y >= 16.0f - 1e-4f);
        CHECK(y <= 235.0f + 1e-4f);
    }
}

TEST_CASE("center_crop_multiple") {
    Image img = random_image(13, 9);
    Image c3 = center_crop_multiple(img, 3);
    CHECK(c3.width == 12);
    CHECK(c3.height == 9);
    // offset (13-12)/2 = 0 horizontally
    CHECK(c3.at(0, 0, 0) == img.at(0, 0, 0));
    Image c4 = center_crop_multiple(img, 4);
    CHECK(c4.width == 12);
    CHECK(c4.height == 8);
}

TEST_CASE("bicubic of a constant image is constant to the last bit") {
    Image img(12, 12);
    for (auto& p : img.pixels) p = 77;
    for (int s : {2, 3, 4}) {
        Image dn = bicubic_downscale(img, s);
        CHECK(dn.width == 12 / s);
        for (auto p : dn.pixels) CHECK(p == 77);
        Image up = bicubic_upscale(img, s);
        for (auto p : up.pixels) CHECK(p == 77);
    }
}

TEST_CASE("bicubic scale 1 is the identity") {
    Image img = random_image(8, 8);
    CHECK(bicubic_downscale(img, 1).pixels == img.pixels);
    CHECK(bicubic_upscale(img, 1).pixels == img.pixels);
    Image odd = random_image(9, 9);
    CHECK_THROWS_AS(bicubic_downscale(odd, 2), ShapeError);
}

TEST_CASE("bicubic downscale matches the direct kernel-sum oracle") {
    // 8x8 ramp, x2: independent per-pixel evaluation of the antialiased
    // cubic kernel with half-pixel centers and edge clamping
    Image img(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(x, y, c) = static_cast<uint8_t>(10 * y + 20 * x + 3 * c);

    auto kernel = [](double t) {
        constexpr double a = -0.5;
        t = std::abs(t);
        if (t <= 1) return (a + 2) * t * t * t - (a + 3) * t * t + 1;
        if (t < 2) return a * t * t * t - 5 * a * t * t + 8 * a * t - 4 * a;
        return 0.0;
    };
    const int s = 2;
    Image got = bicubic_downscale(img, s);
    for (int oy = 0; oy < 4; ++oy)
        for (int ox = 0; ox < 4; ++ox)
            for (int c = 0; c < 3; ++c) {
                const double cx = (ox + 0.5) * s - 0.5, cy = (oy + 0.5) * s - 0.5;
                double acc = 0, wsum = 0;
                for (int iy = static_cast<int>(std::floor(cy - 2 * s));
                     iy <= static_cast<int>(std::ceil(cy + 2 * s)); ++iy)
                    for (int ix = static_cast<int>(std::floor(cx - 2 * s));
                         ix <= static_cast<int>(std::ceil(cx + 2 * s)); ++ix) {
                        const double w = kernel((ix - cx) / s) * kernel((iy - cy) / s);
                        const int sx = std::clamp(ix, 0, 7), sy = std::clamp(iy, 0, 7);
                        acc += w * img.at(sx, sy, c);
                        wsum += w;
                    }
                const double expect = std::clamp(std::round(acc / wsum), 0.0, 255.0);
                CHECK(static_cast<double>(got.at(ox, oy, c)) == expect);
            }
}
