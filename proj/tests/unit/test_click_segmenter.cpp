#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <cmath>
#include <thread>

#include <nlohmann/json.hpp>

#include "base64.hpp"
#include "orthoseg/click_segmenter.hpp"
#include "orthoseg/png_io.hpp"
#include "test_util.hpp"

using namespace orthoseg;
using nlohmann::json;

namespace {

ImageRgb paint_disks(int w, int h, std::initializer_list<std::tuple<double, double, double, Rgb8>> disks, Rgb8 bg) {
    ImageRgb img(w, h, bg);
    for (auto [cx, cy, r, c] : disks)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r)
                    img.set(x, y, c);
    return img;
}

// Minimal segmentation backend used to exercise the protocol.
class FakeBackend {
public:
    explicit FakeBackend(std::function<Mask(int, int, const json&)> make, int protocol = 1) {
        server_.Post("/hello", [protocol](const httplib::Request&, httplib::Response& res) {
            res.set_content(json{{"ok", true}, {"protocol", protocol}}.dump(), "application/json");
        });
        server_.Post("/segment", [make](const httplib::Request& req, httplib::Response& res) {
            const json body = json::parse(req.body);
            const ImageRgb crop = png::decode_rgb(base64::decode(body["crop"].get<std::string>()));
            const Mask m = make(crop.width(), crop.height(), body);
            res.set_content(json{{"mask", base64::encode(png::encode_gray8(m.bytes(), m.width(), m.height()))}}.dump(),
                            "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeBackend() {
        server_.stop();
        thread_.join();
    }
    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

} // namespace

TEST_CASE("base64 round trip") {
    for (std::size_t n = 0; n < 20; ++n) {
        std::vector<std::uint8_t> v(n);
        for (std::size_t i = 0; i < n; ++i)
            v[i] = static_cast<std::uint8_t>(i * 37 + 11);
        CHECK(base64::decode(base64::encode(v)) == v);
    }
    CHECK(base64::encode(std::vector<std::uint8_t>{'M', 'a', 'n'}) == "TWFu");
    CHECK(base64::encode(std::vector<std::uint8_t>{'M'}) == "TQ==");
    CHECK_THROWS_AS(base64::decode("T$=="), Error);
}

TEST_CASE("extreme clicks on a dark disk") {
    const ImageRgb img = paint_disks(160, 140, {{80, 70, 30, Rgb8{30, 30, 40}}}, {240, 240, 235});
    const RasterWindow win{{1000, 2000}, 0, img};
    const ExtremeClicks clicks{{Point{1000 + 50.5, 2000 + 70}, Point{1000 + 109.5, 2000 + 70}, Point{1000 + 80, 2000 + 40.5},
                                Point{1000 + 80, 2000 + 99.5}}};
    const Mask m = segment_extreme(win, clicks, {});
    const Mask truth = testutil::disk_mask(160, 140, 80, 70, 30);
    CHECK(mask_iou(m, truth) >= 0.95);
    CHECK(segment_extreme(win, clicks, {}) == m);
}

TEST_CASE("extreme clicks on a constant image fall back to the click box") {
    const ImageRgb img(40, 40, Rgb8{100, 100, 100});
    const RasterWindow win{{0, 0}, 0, img};
    const ExtremeClicks clicks{{Point{10.5, 11.5}, Point{12.5, 11.5}, Point{11.5, 10.5}, Point{11.5, 12.5}}};
    const Mask m = segment_extreme(win, clicks, {});
    CHECK(m.count() == 9);
    for (int y = 10; y < 13; ++y)
        for (int x = 10; x < 13; ++x)
            CHECK(m(x, y) == 1);
}

TEST_CASE("extreme click validation") {
    const ImageRgb img(40, 40, Rgb8{100, 100, 100});
    const RasterWindow win{{0, 0}, 0, img};
    CHECK_THROWS_AS(segment_extreme(win, {{Point{-5, 5}, Point{10, 5}, Point{5, 0}, Point{5, 10}}}, {}), Error);
    CHECK_THROWS_AS(segment_extreme(win, {{Point{1, 1}, Point{1, 1}, Point{2, 2}, Point{3, 3}}}, {}), Error);
    CHECK_THROWS_AS(segment_extreme(win, {{Point{1, 1}, Point{2, 1}, Point{1, 1.5}, Point{2, 1.5}}}, {}), Error);

    // Contract checker rejects masks outside the click box margin.
    const ExtremeClicks clicks{{Point{10.5, 15}, Point{20.5, 15}, Point{15, 10.5}, Point{15, 20.5}}};
    Mask far(40, 40);
    for (int y = 10; y < 21; ++y)
        for (int x = 10; x < 21; ++x)
            far(x, y) = 1;
    CHECK_NOTHROW(check_extreme_contract(win, clicks, far));
    far(39, 39) = 1;
    CHECK_THROWS_AS(check_extreme_contract(win, clicks, far), Error);
}

TEST_CASE("positive click on a blob") {
    const ImageRgb img = paint_disks(120, 120, {{60, 60, 25, Rgb8{200, 40, 40}}}, {20, 120, 200});
    const RasterWindow win{{0, 0}, 0, img};
    ClickSet c;
    c.positives = {{60, 60}};
    const Mask m = segment_clicks(win, c, {});
    CHECK(mask_iou(m, testutil::disk_mask(120, 120, 60, 60, 25)) >= 0.9);
}

TEST_CASE("negative click separates touching blobs") {
    const ImageRgb img =
        paint_disks(160, 100, {{50, 50, 25, Rgb8{200, 40, 40}}, {100, 50, 25, Rgb8{200, 40, 40}}}, {20, 120, 200});
    const RasterWindow win{{0, 0}, 0, img};
    ClickSet c;
    c.positives = {{45, 50}};
    c.negatives = {{105, 50}};
    const Mask m = segment_clicks(win, c, {});
    CHECK(m(45, 50) == 1);
    CHECK(m(105, 50) == 0);
    const Mask first = testutil::disk_mask(160, 100, 50, 50, 25);
    std::size_t in_first = 0, outside = 0;
    for (int y = 0; y < 100; ++y)
        for (int x = 0; x < 160; ++x) {
            if (m(x, y) && first(x, y))
                ++in_first;
            if (m(x, y) && x > 80)
                ++outside;
        }
    CHECK(static_cast<double>(in_first) >= 0.9 * static_cast<double>(first.count()));
    CHECK(outside < 50);
}

TEST_CASE("single pixel object") {
    ImageRgb img(30, 30, Rgb8{0, 0, 0});
    img.set(15, 15, {255, 255, 255});
    ClickSet c;
    c.positives = {{15.5, 15.5}};
    const Mask m = segment_clicks({{0, 0}, 0, img}, c, {});
    CHECK(m(15, 15) == 1);
}

TEST_CASE("click editing stays near the prior") {
    const ImageRgb img = paint_disks(300, 300, {{150, 150, 60, Rgb8{200, 40, 40}}}, {20, 120, 200});
    ClickSet c;
    c.positives = {{150, 150}};
    c.prior_mask = testutil::disk_mask(300, 300, 150, 150, 40);
    const Mask m = segment_clicks({{0, 0}, 0, img}, c, {});
    CHECK(m(150, 150) == 1);
    CHECK_NOTHROW(check_clicks_contract({{0, 0}, 0, img}, c, m));
    CHECK(m.count() > c.prior_mask->count());
}

TEST_CASE("click validation") {
    const ImageRgb img(20, 20);
    const RasterWindow win{{0, 0}, 0, img};
    CHECK_THROWS_AS(segment_clicks(win, {}, {}), Error);
    ClickSet clash;
    clash.positives = {{5, 5}};
    clash.negatives = {{5.5, 5.5}};
    CHECK_THROWS_AS(segment_clicks(win, clash, {}), Error);
    ClickSet outside;
    outside.positives = {{25, 5}};
    CHECK_THROWS_AS(segment_clicks(win, outside, {}), Error);
}

TEST_CASE("external backend protocol") {
    const ImageRgb img(32, 24, Rgb8{10, 10, 10});
    const RasterWindow win{{100, 100}, 0, img};
    ClickSet c;
    c.positives = {{110, 110}};

    {
        FakeBackend ones([](int w, int h, const json& body) {
            CHECK(body["tool"] == "clicks");
            CHECK(body["origin"] == json::array({100, 100}));
            CHECK(body["clicks"]["positive"][0] == json::array({10.0, 10.0}));
            return Mask(w, h, 1);
        });
        const SegmenterBackend be{BackendKind::external, ones.endpoint(), 5.0};
        CHECK_NOTHROW(handshake(be));
        const Mask m = segment_clicks(win, c, be);
        CHECK(m.count() == 32u * 24u);
    }
    {
        FakeBackend zeros([](int w, int h, const json&) { return Mask(w, h, 0); });
        const SegmenterBackend be{BackendKind::external, zeros.endpoint(), 5.0};
        try {
            (void)segment_clicks(win, c, be);
            FAIL("violating mask accepted");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::contract_violation);
        }
    }
    {
        FakeBackend old([](int w, int h, const json&) { return Mask(w, h, 1); }, 2);
        const SegmenterBackend be{BackendKind::external, old.endpoint(), 5.0};
        CHECK_THROWS_WITH_AS(handshake(be), doctest::Contains("protocol"), Error);
    }
    {
        FakeBackend wrong_size([](int, int, const json&) { return Mask(3, 3, 1); });
        const SegmenterBackend be{BackendKind::external, wrong_size.endpoint(), 5.0};
        CHECK_THROWS_AS(segment_clicks(win, c, be), Error);
    }
    const SegmenterBackend dead{BackendKind::external, "http://127.0.0.1:1", 1.0};
    try {
        (void)segment_clicks(win, c, dead);
        FAIL("unreachable backend accepted");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::io);
    }
}
