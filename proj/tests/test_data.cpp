#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "umixer/data.hpp"
#include "umixer/rng.hpp"

using namespace umixer;
using Catch::Approx;

namespace {

RawSeries random_series(std::size_t C, std::size_t T, std::uint64_t seed) {
    RngStream r(seed);
    RawSeries s;
    s.values = Matrix(C, T);
    for (std::size_t c = 0; c < C; ++c) s.channel_names.push_back("c" + std::to_string(c));
    for (auto& v : s.values.data) v = r.normal();
    return s;
}

// Every patch a sliding window of width P and step S can take over the
// sequence padded with S copies of its last element.
std::vector<std::vector<double>> enumerate_patches(const std::vector<double>& row, std::size_t P, std::size_t S) {
    std::vector<double> padded = row;
    for (std::size_t i = 0; i < S; ++i) padded.push_back(row.back());
    std::vector<std::vector<double>> out;
    for (std::size_t start = 0; start + P <= padded.size(); start += S) {
        out.emplace_back(padded.begin() + static_cast<std::ptrdiff_t>(start),
                         padded.begin() + static_cast<std::ptrdiff_t>(start + P));
    }
    return out;
}

}  // namespace

TEST_CASE("parse a small csv", "[data][csv]") {
    std::istringstream in("date,a,b\n2020-01-01,1,2\n2020-01-02,3,4\n2020-01-03,5,6.5\n");
    const auto s = parse_csv(in);
    CHECK(s.channels() == 2);
    CHECK(s.length() == 3);
    CHECK(s.channel_names[1] == "b");
    CHECK(s.values(1, 2) == 6.5);
    CHECK(s.timestamps[0] == "2020-01-01");
}

TEST_CASE("csv errors name the row", "[data][csv]") {
    std::istringstream bad("date,a\nt1,1\nt2,2\nt3,3\nt4,4\nt5,oops\n");
    try {
        parse_csv(bad);
        FAIL("expected a data error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("row 5") != std::string::npos);
    }
    std::istringstream ragged("date,a,b\nt1,1,2\nt2,3\n");
    CHECK_THROWS_WITH(parse_csv(ragged), Catch::Matchers::ContainsSubstring("row 2"));
    std::istringstream missing("date,a\nt1,\n");
    CHECK_THROWS_AS(parse_csv(missing), DataError);
    CHECK_THROWS_AS(load_csv("/nonexistent/file.csv"), DataError);
}

TEST_CASE("csv write then parse round trips", "[data][csv]") {
    const auto s = random_series(3, 17, 4);
    std::stringstream ss;
    write_csv(ss, s);
    const auto back = parse_csv(ss);
    CHECK(back.values == s.values);
}

TEST_CASE("m4 parsing", "[data][m4]") {
    std::istringstream in("V1,V2,V3\nY1,1,2,3\nY2,4,5\n");
    const auto series = parse_m4(in);
    REQUIRE(series.size() == 2);
    CHECK(series[0].id == "Y1");
    CHECK(series[1].values == std::vector<double>{4, 5});
}

TEST_CASE("chronological split fixtures", "[data][split]") {
    const auto s = random_series(1, 10, 1);
    auto a = chronological_split(s, {6, 2, 2});
    CHECK(a.train.length() == 6);
    CHECK(a.val.length() == 2);
    CHECK(a.test.length() == 2);
    auto b = chronological_split(s, {7, 1, 2});
    CHECK(b.train.length() == 7);
    CHECK(b.val.length() == 1);
    CHECK(b.test.length() == 2);
    CHECK_THROWS_AS(chronological_split(random_series(1, 2, 1), {6, 2, 2}), ConfigError);
    CHECK_THROWS_AS(chronological_split(random_series(1, 4, 1), {6, 0, 2}), ConfigError);
    CHECK(parse_split_ratios("7:1:2").train == 7.0);
    CHECK_THROWS_AS(parse_split_ratios("7:1"), ConfigError);
}

TEST_CASE("splits partition the series", "[data][split][property]") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        RngStream r(seed);
        const std::size_t T = 10 + r.below(300);
        const auto s = random_series(2, T, seed);
        const SplitRatios ratios{1.0 + static_cast<double>(r.below(9)), 1.0 + static_cast<double>(r.below(3)),
                                 1.0 + static_cast<double>(r.below(3))};
        const auto parts = chronological_split(s, ratios);
        REQUIRE(parts.train.length() + parts.val.length() + parts.test.length() == T);
        for (std::size_t c = 0; c < 2; ++c) {
            std::vector<double> joined;
            for (const auto* p : {&parts.train, &parts.val, &parts.test}) {
                const auto row = p->values.row(c);
                joined.insert(joined.end(), row.begin(), row.end());
            }
            const auto orig = s.values.row(c);
            REQUIRE(std::equal(joined.begin(), joined.end(), orig.begin()));
        }
    }
}

TEST_CASE("window counts and adjacency", "[data][windows]") {
    const auto s = random_series(2, 200, 2);
    const auto w = make_windows(s, 96, 96);
    CHECK(w.size() == 9);
    CHECK(w[3].x(1, 0) == s.values(1, 3));
    CHECK(w[3].y(1, 0) == s.values(1, 3 + 96));
    CHECK(make_windows(random_series(1, 30, 1), 20, 10).size() == 1);
    CHECK_THROWS_WITH(make_windows(random_series(1, 29, 1), 20, 10), Catch::Matchers::ContainsSubstring("30"));
    CHECK(make_windows(s, 50, 20, 7).size() == (200 - 70) / 7 + 1);
}

TEST_CASE("instance normalization fixtures", "[data][norm]") {
    const auto [c, cs] = normalize_instance(Matrix(1, 3, {2, 2, 2}));
    for (double v : c.data) CHECK(v == 0.0);
    CHECK(cs.sigma[0] == kSigmaFloor);

    const auto [x, st] = normalize_instance(Matrix(1, 2, {1, 3}));
    CHECK(x(0, 0) == -1.0);
    CHECK(x(0, 1) == 1.0);
    CHECK(st.mu[0] == 2.0);
    CHECK(st.sigma[0] == 1.0);
}

TEST_CASE("instance normalization moments and inversion", "[data][norm][property]") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        RngStream r(seed);
        const std::size_t C = 1 + r.below(4), L = 2 + r.below(100);
        Matrix m(C, L);
        for (auto& v : m.data) v = 5.0 + 3.0 * r.normal();
        const auto [xn, st] = normalize_instance(m);
        for (std::size_t c = 0; c < C; ++c) {
            double mean = 0.0, sq = 0.0;
            for (double v : xn.row(c)) mean += v;
            mean /= static_cast<double>(L);
            for (double v : xn.row(c)) sq += (v - mean) * (v - mean);
            REQUIRE(std::abs(mean) < 1e-12);
            REQUIRE(std::abs(std::sqrt(sq / static_cast<double>(L)) - 1.0) < 1e-9);
        }
        const auto back = denormalize_instance(xn, st);
        for (std::size_t i = 0; i < m.data.size(); ++i) REQUIRE(std::abs(back.data[i] - m.data[i]) < 1e-12);
    }
}

TEST_CASE("patch fixtures", "[data][patch]") {
    CHECK(patch_count(96, 16, 8) == 12);
    CHECK(patch_count(10, 4, 3) == 4);
    CHECK(patch_count(16, 16, 8) == 2);
    CHECK_THROWS_AS(patch_count(8, 9, 1), ConfigError);

    Matrix x(1, 10);
    for (std::size_t t = 0; t < 10; ++t) x(0, t) = static_cast<double>(t);
    const auto ps = patchify(x, 4, 3);
    REQUIRE(ps.num_patches == 4);
    CHECK(ps.patches(3, 0) == 9.0);  // offset 9 over padded length 13
    CHECK(ps.patches(3, 3) == 9.0);
    CHECK(ps.patches(1, 0) == 3.0);

    Matrix big(1, 96);
    for (std::size_t t = 0; t < 96; ++t) big(0, t) = static_cast<double>(t);
    const auto p96 = patchify(big, 16, 8);
    CHECK(p96.patches(11, 0) == 88.0);
    CHECK(p96.patches(11, 15) == 95.0);  // padded index 103 repeats the last value
}

TEST_CASE("patch count agrees with brute-force enumeration", "[data][patch][exhaustive]") {
    for (std::size_t L = 1; L <= 64; ++L) {
        std::vector<double> row(L);
        for (std::size_t t = 0; t < L; ++t) row[t] = static_cast<double>(t) + 0.5;
        const Matrix m(1, L, row);
        for (std::size_t P = 1; P <= L; ++P)
            for (std::size_t S = 1; S <= 16; ++S) {
                const auto brute = enumerate_patches(row, P, S);
                REQUIRE(patch_count(L, P, S) == brute.size());
                const auto ps = patchify(m, P, S);
                for (std::size_t n = 0; n < brute.size(); ++n) {
                    const auto got = ps.patches.row(n);
                    REQUIRE(std::equal(got.begin(), got.end(), brute[n].begin()));
                }
            }
    }
}

TEST_CASE("offset-zero patches reproduce the first P columns", "[data][patch][property]") {
    const auto s = random_series(3, 40, 9);
    const auto ps = patchify(s.values, 8, 4);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < 8; ++p) CHECK(ps.patches(c * ps.num_patches, p) == s.values(c, p));
}

TEST_CASE("channel scaler fits on train and inverts", "[data][scaler]") {
    const auto s = random_series(2, 50, 3);
    const auto sc = ChannelScaler::fit(s);
    const auto z = sc.transform(s);
    double mean = 0.0;
    for (double v : z.values.row(0)) mean += v;
    CHECK(std::abs(mean / 50.0) < 1e-12);
    const auto back = sc.inverse(z.values);
    for (std::size_t i = 0; i < back.data.size(); ++i) CHECK(back.data[i] == Approx(s.values.data[i]).margin(1e-12));
}
