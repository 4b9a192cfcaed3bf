#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "flowgate/corpus.hpp"
#include "flowgate/dataset.hpp"
#include "support.hpp"

using namespace flowgate;

namespace {

std::uint16_t port(const packet::EncodedPacket& p, std::size_t at) {
  return static_cast<std::uint16_t>(std::lround(p.values[60 + at] * 255) << 8 | std::lround(p.values[61 + at] * 255));
}

}  // namespace

TEST_CASE("empty corpus writes header-only files") {
  const auto c = corpus::make_synthetic_corpus(1, 0, 0);
  CHECK(c.normal.empty());
  CHECK(c.anomaly.empty());
  const auto dir = testing::scratch_dir("corpus");
  CHECK(dataset::write_dataset(c.normal, dir / "normal.csv") == 0);
  std::ifstream in(dir / "normal.csv");
  std::string header, extra;
  std::getline(in, header);
  CHECK(header.rfind("f0,f1,", 0) == 0);
  CHECK(header.size() > 1600 * 2);
  CHECK_FALSE(std::getline(in, extra));
  CHECK(dataset::read_dataset(dir / "normal.csv").empty());
}

TEST_CASE("corpus rows satisfy the encoding invariants") {
  const auto c = corpus::make_synthetic_corpus(2, 300, 300);
  REQUIRE(c.normal.size() == 300);
  REQUIRE(c.anomaly.size() == 300);
  for (const auto* set : {&c.normal, &c.anomaly}) {
    for (const auto& p : *set) {
      REQUIRE(p.values.size() == 1600);
      for (double v : p.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(v * 255 == std::round(v * 255));
      }
      CHECK(std::lround(p.values[0] * 255) == 0x45);  // IPv4, no options
      for (std::size_t i = 10; i < 20; ++i) CHECK(p.values[i] == 0.0);  // anonymized
    }
  }
  for (const auto& p : c.normal) CHECK(p.label == packet::Label::Normal);
  for (const auto& p : c.anomaly) CHECK(p.label == packet::Label::Anomaly);
}

TEST_CASE("the two classes differ and share some structure") {
  const auto c = corpus::make_synthetic_corpus(3, 2000, 2000);
  CHECK(std::abs(corpus::mean_value(c.normal) - corpus::mean_value(c.anomaly)) > 0.05);
  // TTL lives at IP byte 8.
  std::set<long> normal_ttl, anomaly_ttl;
  for (const auto& p : c.normal) normal_ttl.insert(std::lround(p.values[8] * 255));
  for (const auto& p : c.anomaly) anomaly_ttl.insert(std::lround(p.values[8] * 255));
  CHECK(normal_ttl == std::set<long>{64});
  CHECK(anomaly_ttl.count(128) == 1);
  // Some anomalies reuse normal-looking headers: separation is not trivial.
  CHECK(anomaly_ttl.count(64) == 1);
  // Both classes leave the high ephemeral range to the client side only.
  std::set<std::uint16_t> normal_service;
  for (const auto& p : c.normal) normal_service.insert(std::min(port(p, 0), port(p, 2)));
  CHECK(normal_service.count(4444) == 0);
}

TEST_CASE("corpus generation is deterministic per seed") {
  const auto a = corpus::make_synthetic_corpus(4, 50, 50);
  const auto b = corpus::make_synthetic_corpus(4, 50, 50);
  const auto d = corpus::make_synthetic_corpus(5, 50, 50);
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(a.normal[i].values == b.normal[i].values);
    CHECK(a.anomaly[i].values == b.anomaly[i].values);
  }
  CHECK(a.normal[0].values != d.normal[0].values);
  // Frame i does not depend on how many frames are requested.
  const auto shorter = corpus::make_synthetic_corpus(4, 10, 10);
  CHECK(shorter.normal[9].values == a.normal[9].values);
  CHECK(shorter.anomaly[9].values == a.anomaly[9].values);
}
