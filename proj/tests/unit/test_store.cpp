#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "fixtures.hpp"
#include "vlfuse/prompt_bank.hpp"
#include "vlfuse/store.hpp"

using namespace vlfuse;
using namespace vlfuse::testing;

namespace {

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool has_kind(const std::vector<Diagnostic>& ds, DiagnosticKind k) {
  for (const auto& d : ds) {
    if (d.kind == k) return true;
  }
  return false;
}

StoreErrc load_error(const std::filesystem::path& p) {
  try {
    load_store(p);
  } catch (const StoreError& e) {
    return e.code();
  }
  FAIL("load_store accepted a broken file");
  return StoreErrc::io;
}

}  // namespace

TEST_SUITE("store") {
  TEST_CASE("save and load reproduce every field") {
    auto b = make_bundle(random_store(37, 19, 3), std::vector<ClassId>(37, 2), 5);
    b.manifest.cleaner_mask.assign(37, false);
    b.manifest.cleaner_mask[4] = true;
    b.manifest.cleaner_mask[9] = true;
    std::vector<std::vector<ClassId>> ml(37);
    ml[4] = {2};
    ml[9] = {2, 4};
    b.manifest.multi_labels = ml;
    b.manifest.classes = ClassCatalog{{{"WordNet", {"a", "b", "c", "d", "e"}}}};
    b.manifest.provenance = {{"encoder", "toy"}, {"revision", 3}};

    const auto dir = temp_dir("store-roundtrip");
    save_store(b, dir / "x.emb");
    const auto back = load_store(dir / "x.emb");
    CHECK(back.store == b.store);
    CHECK(back.labels == b.labels);
    CHECK(back.manifest == b.manifest);
    CHECK(std::filesystem::exists(manifest_path(dir / "x.emb")));
  }

  TEST_CASE("wide class ids use wider label fields") {
    const std::size_t classes = 70000;
    std::vector<ClassId> labels = {0, 69999, 300, 65536};
    auto b = make_bundle(random_store(4, 3, 5), labels, classes);
    const auto dir = temp_dir("store-wide");
    save_store(b, dir / "w.emb");
    CHECK(load_store(dir / "w.emb").labels == b.labels);
  }

  TEST_CASE("header layout") {
    const auto dir = temp_dir("store-header");
    auto b = make_bundle(random_store(3, 2, 1), {0, 1, 0}, 2);
    save_store(b, dir / "h.emb");
    const auto bytes = slurp(dir / "h.emb");
    REQUIRE(bytes.size() >= 28);
    CHECK(std::string(bytes.data(), 4) == "EMB1");
    std::uint64_t n = 0;
    std::uint32_t d = 0;
    std::memcpy(&n, bytes.data() + 8, 8);
    std::memcpy(&d, bytes.data() + 16, 4);
    CHECK(n == 3);
    CHECK(d == 2);
    CHECK(bytes[20] == 0);
    CHECK(bytes[21] == 1);
    // header, matrix, labels (count + one byte), ids (length + "sN"), crc
    CHECK(bytes.size() == 24 + 24 + 3 * 5 + 3 * 6 + 4);
  }

  TEST_CASE("every single-bit flip is rejected") {
    const auto dir = temp_dir("store-bitflip");
    auto b = make_bundle(random_store(5, 4, 9), {0, 1, 2, 0, 1}, 3);
    save_store(b, dir / "c.emb");
    const auto good = slurp(dir / "c.emb");
    for (std::size_t byte = 0; byte < good.size(); ++byte) {
      for (int bit = 0; bit < 8; ++bit) {
        auto bad = good;
        bad[byte] = static_cast<char>(bad[byte] ^ (1 << bit));
        spit(dir / "c.emb", bad);
        CHECK_THROWS_AS(load_store(dir / "c.emb"), StoreError);
      }
    }
  }

  TEST_CASE("corruption categories") {
    const auto dir = temp_dir("store-errors");
    auto b = make_bundle(random_store(6, 4, 2), {0, 1, 2, 0, 1, 2}, 3);
    const auto p = dir / "e.emb";
    save_store(b, p);
    const auto good = slurp(p);

    auto bad = good;
    bad[0] = 'X';
    spit(p, bad);
    CHECK(load_error(p) == StoreErrc::bad_magic);

    bad = good;
    bad[4] = 2;
    spit(p, bad);
    CHECK(load_error(p) == StoreErrc::version_mismatch);

    bad = good;
    bad.resize(good.size() - 30);
    spit(p, bad);
    CHECK(load_error(p) != StoreErrc::io);

    bad = good;
    bad[30] = static_cast<char>(bad[30] ^ 0x10);
    spit(p, bad);
    CHECK(load_error(p) == StoreErrc::checksum);

    spit(p, good);
    CHECK_NOTHROW(load_store(p));

    CHECK(load_error(dir / "missing.emb") == StoreErrc::io);
  }

  TEST_CASE("manifest hash must match the matrix") {
    const auto dir = temp_dir("store-hash");
    auto b = make_bundle(random_store(4, 3, 2), {0, 1, 0, 1}, 2);
    const auto p = dir / "m.emb";
    save_store(b, p);
    auto doc = nlohmann::json::parse(std::ifstream(manifest_path(p)));
    doc["content_sha256"] = std::string(64, '0');
    std::ofstream(manifest_path(p)) << doc.dump();
    CHECK(load_error(p) == StoreErrc::hash_mismatch);

    doc.erase("format");
    std::ofstream(manifest_path(p)) << doc.dump();
    CHECK(load_error(p) == StoreErrc::bad_manifest);

    std::filesystem::remove(manifest_path(p));
    CHECK(load_error(p) == StoreErrc::io);
  }

  TEST_CASE("save refuses invalid stores") {
    const auto dir = temp_dir("store-refuse");
    auto s = random_store(3, 4, 1);
    std::vector<float> data(s.data().begin(), s.data().end());
    data[0] *= 3.0f;
    auto b = make_bundle(EmbeddingStore(3, 4, data, s.sample_ids()), {0, 0, 0}, 1);
    try {
      save_store(b, dir / "r.emb");
      FAIL("expected StoreError");
    } catch (const StoreError& e) {
      CHECK(e.code() == StoreErrc::invalid);
    }
    CHECK_FALSE(std::filesystem::exists(dir / "r.emb"));
  }

  TEST_CASE("validate_store reports each violation") {
    auto s = random_store(4, 3, 8);
    std::vector<float> data(s.data().begin(), s.data().end());
    data[0] = std::numeric_limits<float>::quiet_NaN();
    data[3] *= 2.0f;
    std::vector<std::string> ids = {"a", "b", "a", "c"};
    EmbeddingStore bad(4, 3, data, ids);
    const auto labels = LabelSet(3, {{0}, {1}, {}, {7}});
    DatasetManifest m;
    m.num_classes = 3;
    m.cleaner_mask = {true, false};
    const auto ds = validate_store(bad, &labels, &m);
    CHECK(has_kind(ds, DiagnosticKind::non_finite));
    CHECK(has_kind(ds, DiagnosticKind::norm));
    CHECK(has_kind(ds, DiagnosticKind::duplicate_id));
    CHECK(has_kind(ds, DiagnosticKind::label_count));
    CHECK(has_kind(ds, DiagnosticKind::label_range));
    CHECK(has_kind(ds, DiagnosticKind::manifest));
    for (const auto& d : ds) CHECK_FALSE(format(d).empty());

    CHECK(validate_store(random_store(5, 8, 1)).empty());
    CHECK(has_kind(validate_store(EmbeddingStore()), DiagnosticKind::shape));
  }

  TEST_CASE("multi-labels must follow the cleaner mask") {
    auto b = make_bundle(random_store(3, 2, 4), {0, 1, 0}, 2);
    b.manifest.cleaner_mask = {true, false, true};
    b.manifest.multi_labels = std::vector<std::vector<ClassId>>{{0}, {1}, {}};
    const auto ds = validate_store(b.store, &b.labels, &b.manifest);
    REQUIRE(ds.size() == 2);
    CHECK(ds[0].sample == 1);
    CHECK(ds[1].sample == 2);
  }

  TEST_CASE("constructor rejects mismatched pieces") {
    CHECK_THROWS_AS(EmbeddingStore(2, 2, std::vector<float>(3), {"a", "b"}), std::invalid_argument);
    CHECK_THROWS_AS(EmbeddingStore(2, 2, std::vector<float>(4), {"a"}), std::invalid_argument);
  }

  TEST_CASE("subset keeps per-sample manifest fields aligned") {
    auto b = make_bundle(random_store(4, 2, 6), {0, 1, 1, 0}, 2);
    b.manifest.cleaner_mask = {true, false, true, true};
    b.manifest.multi_labels = std::vector<std::vector<ClassId>>{{0}, {}, {1, 0}, {0}};
    const auto s = subset(b, {false, true, true, false});
    CHECK(s.store.n() == 2);
    CHECK(s.store.sample_ids() == std::vector<std::string>{"s1", "s2"});
    CHECK(s.labels.primary_labels() == std::vector<ClassId>{1, 1});
    CHECK(s.manifest.cleaner_mask == std::vector<bool>{false, true});
    CHECK((*s.manifest.multi_labels)[1] == std::vector<ClassId>{1, 0});
    CHECK(s.manifest.content_sha256 == content_hash(s.store));
    CHECK(mask_indices({false, true, true, false}) == std::vector<std::size_t>{1, 2});
  }

  TEST_CASE("label sets") {
    const LabelSet ls(4, {{1}, {2, 3}, {}});
    CHECK(ls.size() == 3);
    CHECK_FALSE(ls.is_single_label());
    CHECK(ls.contains(1, 3));
    CHECK_FALSE(ls.contains(0, 3));
    CHECK(ls.primary(1) == 2);
    CHECK_THROWS_AS(ls.primary(2), std::logic_error);
    const std::vector<std::size_t> pick = {1};
    CHECK(ls.select(pick).labels(0).size() == 2);
  }

  TEST_CASE("prompt banks index every (template, class) pair") {
    const auto bank = random_bank(3, 4, 6, 11);
    CHECK(bank.template_count() == 3);
    CHECK(bank.class_count() == 4);
    for (std::uint32_t t = 0; t < 3; ++t) {
      for (ClassId c = 0; c < 4; ++c) {
        const auto r = bank.row(t, c);
        CHECK(bank.row_template(r) == t);
        CHECK(bank.row_classes().primary(r) == c);
      }
    }
    const auto dir = temp_dir("bank");
    save_prompt_bank(bank, dir / "b.emb");
    const auto back = load_prompt_bank(dir / "b.emb");
    CHECK(back.store() == bank.store());
    CHECK(back.templates() == bank.templates());
    CHECK(back.name_set() == "OpenAI+");

    const auto defaults = default_templates();
    REQUIRE(defaults.size() == 8);
    const auto full = random_bank(8, 2, 4, 1);
    for (std::uint32_t t = 0; t < 7; ++t) CHECK_FALSE(full.is_no_context(t));
    CHECK(full.is_no_context(7));
  }

  TEST_CASE("prompt bank rejects a duplicated pair") {
    auto b = random_bank(2, 2, 3, 1).bundle();
    auto labels = b.labels.primary_labels();
    labels[1] = 0;
    b.labels = LabelSet::single(2, labels);
    CHECK_THROWS(PromptBank(b));
  }
}
