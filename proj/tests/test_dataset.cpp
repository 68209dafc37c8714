#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "latent_atlas/binary_io.hpp"
#include "latent_atlas/dataset.hpp"
#include "latent_atlas/error.hpp"
#include "latent_atlas/random.hpp"
#include "test_support.hpp"

using namespace latent_atlas;
using latent_atlas::testing::TempDir;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::internal;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

bool bit_equal(const Dataset& a, const Dataset& b) {
  if (!(a == b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t d = 0; d < a.dimension(); ++d) {
      if (std::bit_cast<std::uint64_t>(a.vector(i)[d]) != std::bit_cast<std::uint64_t>(b.vector(i)[d])) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace

TEST_CASE("jsonl ingest of a 60 x 512 set with 10 families") {
  Rng rng(3);
  std::ostringstream os;
  for (int i = 0; i < 60; ++i) {
    os << R"({"id":"s)" << i << R"(","family":"fam)" << i % 10 << R"(","pitch":60,"vector":[)";
    for (int d = 0; d < 512; ++d) os << (d ? "," : "") << rng.normal();
    os << "]}\n";
  }
  const auto ds = ingest_jsonl(os.str(), "sounds");
  CHECK(ds.dimension() == 512);
  CHECK(ds.size() == 60);
  std::set<std::string> families;
  for (const auto& r : ds.records()) families.insert(r.family);
  CHECK(families.size() == 10);
  CHECK(ds[17].id == "s17");
  CHECK(ds[17].pitch == 60);
  CHECK_FALSE(ds[17].audio_path.has_value());
}

TEST_CASE("minimal valid input and optional fields") {
  const auto ds = ingest_jsonl(R"({"id":"a","family":"bell","vector":[0,0,0]})", "one");
  CHECK(ds.dimension() == 3);
  CHECK(ds.size() == 1);
  const auto with_audio =
      ingest_jsonl(R"({"id":"a","family":"f","vector":[1,2],"audio_path":"a.wav"})", "x");
  CHECK(with_audio[0].audio_path == "a.wav");
}

TEST_CASE("each ingest failure is a distinct error") {
  CHECK(code_of([] {
          ingest_jsonl("{\"id\":\"a\",\"family\":\"f\",\"vector\":[1,2,3,4]}\n"
                       "{\"id\":\"b\",\"family\":\"f\",\"vector\":[1,2,3,4,5]}\n",
                       "x");
        }) == ErrorCode::dimension_mismatch);
  CHECK(code_of([] {
          ingest_jsonl("{\"id\":\"a\",\"family\":\"f\",\"vector\":[1,2]}\n"
                       "{\"id\":\"a\",\"family\":\"g\",\"vector\":[3,4]}\n",
                       "x");
        }) == ErrorCode::duplicate_id);
  CHECK(code_of([] { ingest_jsonl("\n\n", "x"); }) == ErrorCode::empty_input);
  CHECK(code_of([] { ingest_csv("", "x"); }) == ErrorCode::empty_input);
  CHECK(code_of([] {
          ingest_csv("id,family,pitch,audio_path,v0,v1\na,f,,,1,nan\n", "x");
        }) == ErrorCode::non_finite);
  CHECK(code_of([] {
          ingest_csv("id,family,pitch,audio_path,v0,v1\na,f,,,1,1e999\n", "x");
        }) == ErrorCode::non_finite);
  CHECK(code_of([] { ingest_jsonl("{\"id\":\"a\",\"vector\":[1,2]}", "x"); }) == ErrorCode::parse);
  CHECK(code_of([] { ingest_jsonl("{not json", "x"); }) == ErrorCode::parse);
  CHECK(code_of([] { ingest_csv("id,pitch,family,audio_path,v0\n", "x"); }) == ErrorCode::parse);
  CHECK(code_of([] { ingest_jsonl(R"({"id":"a","family":"f","vector":[1]})", "x"); }) ==
        ErrorCode::dimension_mismatch);
}

TEST_CASE("csv ingest keeps row order and optional columns") {
  const std::string text =
      "id,family,pitch,audio_path,v0,v1,v2\n"
      "b,guitar,60,b.wav,1.5,-2,3e-3\n"
      "a,\"flute, alto\",,,0,0,1\n";
  const auto ds = ingest_csv(text, "csv");
  REQUIRE(ds.size() == 2);
  CHECK(ds[0].id == "b");
  CHECK(ds[0].pitch == 60);
  CHECK(ds[0].audio_path == "b.wav");
  CHECK(ds[0].vector == std::vector<double>{1.5, -2.0, 3e-3});
  CHECK(ds[1].family == "flute, alto");
  CHECK_FALSE(ds[1].pitch.has_value());
}

TEST_CASE("ingest from files") {
  TempDir dir;
  write_text(dir / "d.jsonl", "{\"id\":\"x\",\"family\":\"f\",\"vector\":[1,2]}\n");
  write_text(dir / "d.csv", "id,family,pitch,audio_path,v0,v1\nx,f,,,1,2\n");
  const auto a = ingest(dir / "d.jsonl", IngestFormat::jsonl);
  const auto b = ingest(dir / "d.csv", IngestFormat::csv);
  CHECK(a.records() == b.records());
  CHECK(code_of([&] { ingest(dir / "missing.csv", IngestFormat::csv); }) == ErrorCode::io);
}

TEST_CASE("fixture mirrors 60 sounds in 10 families") {
  const auto ds = synth_fixture(10, 6, 32, 42);
  CHECK(ds.size() == 60);
  CHECK(ds.dimension() == 32);
  std::set<std::string> families;
  for (const auto& r : ds.records()) families.insert(r.family);
  CHECK(families.size() == 10);
  CHECK(ds[0].family == "0");
  CHECK(ds[59].family == "9");
}

TEST_CASE("single-point fixture sits on its center") {
  const auto ds = synth_fixture(1, 1, 2, 0);
  REQUIRE(ds.size() == 1);
  CHECK(ds[0].vector == fixture_centers(1, 2, 0)[0]);
}

TEST_CASE("fixture centers are at least 10 sigma apart") {
  for (auto [c, d, seed] : {std::tuple{3, 16, 7}, std::tuple{10, 32, 42}, std::tuple{12, 2, 5}}) {
    const auto centers = fixture_centers(c, d, seed);
    REQUIRE(centers.size() == static_cast<std::size_t>(c));
    for (std::size_t i = 0; i < centers.size(); ++i) {
      for (std::size_t j = i + 1; j < centers.size(); ++j) {
        double d2 = 0.0;
        for (std::size_t q = 0; q < centers[i].size(); ++q) {
          d2 += (centers[i][q] - centers[j][q]) * (centers[i][q] - centers[j][q]);
        }
        CHECK(std::sqrt(d2) >= 10.0 * kFixtureSigma);
      }
    }
  }
  // The points of (3, 20, 16, 7) are generated around exactly these centers.
  const auto ds = synth_fixture(3, 20, 16, 7);
  const auto centers = fixture_centers(3, 16, 7);
  for (const auto& r : ds.records()) {
    const auto& c = centers[static_cast<std::size_t>(std::stoi(r.family))];
    double d2 = 0.0;
    for (std::size_t q = 0; q < c.size(); ++q) d2 += (r.vector[q] - c[q]) * (r.vector[q] - c[q]);
    CHECK(std::sqrt(d2) < 5.0 * std::sqrt(16.0) * kFixtureSigma);
  }
}

TEST_CASE("fixture is a pure function of its arguments") {
  CHECK(serialize(synth_fixture(3, 5, 8, 1)) == serialize(synth_fixture(3, 5, 8, 1)));
  CHECK(serialize(synth_fixture(3, 5, 8, 1)) != serialize(synth_fixture(3, 5, 8, 2)));
}

TEST_CASE("save and load round-trip") {
  TempDir dir;
  const auto ds = synth_fixture(3, 5, 8, 1);
  save(ds, dir / "a.lads");
  const auto back = load_dataset(dir / "a.lads");
  CHECK(bit_equal(ds, back));
  CHECK(back.checksum() == ds.checksum());

  const auto big = synth_fixture(10, 6, 512, 9);
  save(big, dir / "big.lads");
  CHECK(bit_equal(big, load_dataset(dir / "big.lads")));
}

TEST_CASE("corrupt files are rejected") {
  TempDir dir;
  const auto bytes = serialize(synth_fixture(3, 5, 8, 1));
  write_file_atomic(dir / "t.lads", std::span(bytes).first(bytes.size() / 2));
  CHECK(code_of([&] { load_dataset(dir / "t.lads"); }) == ErrorCode::corrupt_file);

  auto flipped = bytes;
  flipped[0] ^= 0xff;
  write_file_atomic(dir / "sig.lads", flipped);
  CHECK(code_of([&] { load_dataset(dir / "sig.lads"); }) == ErrorCode::corrupt_file);

  auto body = bytes;
  body[body.size() / 2] ^= 0x01;
  write_file_atomic(dir / "body.lads", body);
  CHECK(code_of([&] { load_dataset(dir / "body.lads"); }) == ErrorCode::corrupt_file);

  const auto matrix_bytes = serialize(Matrix{1, 2, {1.0, 2.0}});
  CHECK(code_of([&] { deserialize_dataset(matrix_bytes); }) == ErrorCode::corrupt_file);
}

TEST_CASE("property: random datasets survive serialization bit-exactly") {
  Rng rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    const auto dim = 2 + rng.below(20);
    const auto n = 1 + rng.below(30);
    std::vector<EmbeddingRecord> recs;
    for (std::size_t i = 0; i < n; ++i) {
      EmbeddingRecord r;
      r.id = "r" + std::to_string(i) + std::string(rng.below(4), '#');
      r.family = std::string(1, static_cast<char>('a' + rng.below(5)));
      if (rng.below(2)) r.pitch = static_cast<int>(rng.below(128));
      if (rng.below(2)) r.audio_path = "audio/" + r.id + ".wav";
      for (std::size_t d = 0; d < dim; ++d) {
        // Mix ordinary values with subnormals and extremes.
        const auto pick = rng.below(4);
        r.vector.push_back(pick == 0   ? std::ldexp(rng.uniform(), -1060)
                           : pick == 1 ? -std::ldexp(rng.uniform(), 1000)
                                       : rng.normal());
      }
      recs.push_back(std::move(r));
    }
    const Dataset ds("prop-" + std::to_string(trial), std::move(recs));
    CHECK(bit_equal(ds, deserialize_dataset(serialize(ds))));
  }
}

TEST_CASE("matrix container round-trip") {
  const Matrix m{2, 3, {1, 2, 3, 4, 5, 6}};
  CHECK(deserialize_matrix(serialize(m)) == m);
  CHECK(code_of([] { serialize(Matrix{2, 2, {1.0}}); }) == ErrorCode::invalid_argument);
}
