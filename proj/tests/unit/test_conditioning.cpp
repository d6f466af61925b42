#include "doctest.h"
#include "helpers.hpp"
#include "tfk/conditioning.hpp"
#include "tfk/error.hpp"

using namespace tfk;

TEST_SUITE("conditioning") {

TEST_CASE("all-white tissue with zero concentration") {
  const GridSpec s = GridSpec::cube(4);
  const auto c = assemble(TissueMap::filled(s, TissueLabel::WhiteMatter), field_new(s, 0.0), Modality::T1);
  REQUIRE(c.channels.channels == kConditioningChannels);
  for (std::size_t v = 0; v < s.voxel_count(); ++v) {
    REQUIRE(c.channels.channel(0)[v] == 0.0);
    REQUIRE(c.channels.channel(1)[v] == 0.0);
    REQUIRE(c.channels.channel(2)[v] == 1.0);
    REQUIRE(c.channels.channel(3)[v] == 0.0);
  }
}

TEST_CASE("concentration out of range and shape mismatch") {
  const GridSpec s = GridSpec::cube(3);
  ScalarField3D conc = field_new(s, 0.1);
  conc[5] = 1.2;
  try {
    assemble(TissueMap::filled(s, TissueLabel::GrayMatter), conc, Modality::T2);
    FAIL("expected ConcentrationOutOfRange");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConcentrationOutOfRange);
  }
  try {
    assemble(TissueMap::filled(GridSpec::cube(4), TissueLabel::GrayMatter), field_new(s, 0.1), Modality::T2);
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
}

TEST_CASE("one-hot partition over random tissue maps") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const GridSpec s{6, 5, 4, 1, 1, 1};
    TissueMap t = testutil::random_tissue(s, seed);
    t.labels[0] = TissueLabel::Background;
    const ScalarField3D conc = testutil::random_field(s, seed);
    const auto c = assemble(t, conc, Modality::FLAIR);
    const auto again = assemble(t, conc, Modality::FLAIR);
    REQUIRE(c == again);
    for (std::size_t v = 0; v < s.voxel_count(); ++v) {
      const double sum = c.channels.channel(0)[v] + c.channels.channel(1)[v] + c.channels.channel(2)[v];
      REQUIRE(sum == (t.is_brain(v) ? 1.0 : 0.0));
      if (t.is_brain(v)) {
        const std::size_t hot = static_cast<std::size_t>(t.labels[v]) - 1;
        REQUIRE(c.channels.channel(hot)[v] == 1.0);
      }
      REQUIRE(c.channels.channel(3)[v] == conc[v]);
    }
  }
}

TEST_CASE("modality codes and names") {
  CHECK(static_cast<int>(Modality::T1) == 0);
  CHECK(static_cast<int>(Modality::T1c) == 1);
  CHECK(static_cast<int>(Modality::T2) == 2);
  CHECK(static_cast<int>(Modality::FLAIR) == 3);
  for (Modality m : kAllModalities) CHECK(parse_modality(modality_name(m)) == m);
  CHECK(parse_modality("flair") == Modality::FLAIR);
  CHECK(parse_modality("1") == Modality::T1c);
  CHECK_FALSE(parse_modality("DWI").has_value());
}

}  // TEST_SUITE
