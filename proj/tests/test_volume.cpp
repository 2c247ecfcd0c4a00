#include "fragreg/nifti_io.hpp"
#include "fragreg/volume.hpp"

#include <doctest.h>

#include <random>

using namespace fragreg;

namespace {

Volume ramp_volume(int nx, int ny, int nz, const Vec3& spacing,
                   const Vec3& origin, const Vec3& slope) {
  Volume v = Volume::make(nx, ny, nz, spacing, origin);
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        v.at(i, j, k) = static_cast<float>(slope.dot(v.voxel_center(i, j, k)));
      }
    }
  }
  return v;
}

}  // namespace

TEST_CASE("trilinear sampling at voxel centers and midpoints") {
  Volume v = Volume::make(4, 4, 4, Vec3(2, 2, 2), Vec3(10, 20, 30));
  v.at(1, 2, 3) = 7.5f;
  v.at(2, 2, 3) = 10.f;
  v.at(1, 1, 1) = 0.f;
  v.at(2, 1, 1) = 10.f;

  CHECK(trilinear_sample(v, v.voxel_center(1, 2, 3)) == doctest::Approx(7.5));
  // Midpoint between (1,1,1)=0 and (2,1,1)=10.
  const Vec3 mid = 0.5 * (v.voxel_center(1, 1, 1) + v.voxel_center(2, 1, 1));
  CHECK(trilinear_sample(v, mid) == doctest::Approx(5.0));
  // Far outside.
  CHECK(trilinear_sample(v, Vec3(1e6, 0, 0)) == 0.f);
}

TEST_CASE("hu to attenuation mapping") {
  CHECK(hu_to_attenuation_value(-130.f) == 0.f);
  CHECK(hu_to_attenuation_value(-1000.f) == 0.f);

  // Linearity above the threshold: HU = -130 + 2/k is exactly twice
  // HU = -130 + 1/k.
  const double k = kAttenuationSlopePerHu;
  const float one = hu_to_attenuation_value(static_cast<float>(-130 + 1 / k));
  const float two = hu_to_attenuation_value(static_cast<float>(-130 + 2 / k));
  CHECK(two == doctest::Approx(2 * one).epsilon(1e-6));
  CHECK(one == doctest::Approx(1.0).epsilon(1e-6));

  // Monotone, no upper clamp.
  float prev = -1.f;
  for (float hu = -500; hu < 30000; hu += 37) {
    const float a = hu_to_attenuation_value(hu);
    CHECK(a >= prev);
    prev = a;
  }
  CHECK(hu_to_attenuation_value(30000.f) > hu_to_attenuation_value(3000.f));
}

TEST_CASE("isotropic resampling") {
  SUBCASE("already isotropic at requested spacing is identity") {
    Volume v = Volume::make(6, 5, 4, Vec3::Ones(), Vec3(1, 2, 3));
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> u(0, 100);
    for (auto& x : v.voxels) x = u(rng);
    const Volume r = resample_isotropic(v, 1.0);
    REQUIRE(r.dims == v.dims);
    for (std::size_t i = 0; i < v.voxels.size(); ++i) {
      CHECK(r.voxels[i] == doctest::Approx(v.voxels[i]).epsilon(1e-6));
    }
  }

  SUBCASE("constant volume stays constant") {
    Volume v = Volume::make(8, 8, 8, Vec3(0.7, 0.7, 1.3), Vec3::Zero(), 3.25f);
    const Volume r = resample_isotropic(v, 1.0);
    for (float x : r.voxels) CHECK(x == doctest::Approx(3.25).epsilon(1e-6));
  }

  SUBCASE("linear ramp is preserved") {
    const Vec3 slope(0.3, -0.2, 0.5);
    Volume v = ramp_volume(12, 10, 9, Vec3(0.8, 1.1, 0.9), Vec3(5, -3, 2), slope);
    const Volume r = resample_isotropic(v, 1.0);
    double rms = 0;
    for (int k = 0; k < r.dims[2]; ++k) {
      for (int j = 0; j < r.dims[1]; ++j) {
        for (int i = 0; i < r.dims[0]; ++i) {
          const double expect = slope.dot(r.voxel_center(i, j, k));
          rms += (r.at(i, j, k) - expect) * (r.at(i, j, k) - expect);
        }
      }
    }
    rms = std::sqrt(rms / r.size());
    CHECK(rms < 1e-5);
  }
}

TEST_CASE("tight sub-volume extraction") {
  Volume v = Volume::make(10, 12, 14, Vec3::Ones(), Vec3(-5, 0, 5), 1.f);
  LabelMap labels = LabelMap::make_like(v);

  SUBCASE("single labeled voxel") {
    labels.set(3, 7, 9, Label::fragment);
    const ObjectVolume obj = extract_tight_subvolume(v, labels, Label::fragment);
    CHECK(obj.volume.dims == std::array<int, 3>{1, 1, 1});
    CHECK((obj.world_offset - v.voxel_center(3, 7, 9)).norm() < 1e-12);
    CHECK(obj.volume.at(0, 0, 0) == 1.f);
  }

  SUBCASE("full-grid label spans the input") {
    for (auto& l : labels.voxels) l = static_cast<std::uint8_t>(Label::pelvis);
    const ObjectVolume obj = extract_tight_subvolume(v, labels, Label::pelvis);
    CHECK(obj.volume.dims == v.dims);
    CHECK((obj.world_offset - v.origin).norm() < 1e-12);
  }

  SUBCASE("two disjoint blocks: box spans both, oracle matches") {
    for (int k = 2; k <= 3; ++k)
      for (int j = 1; j <= 2; ++j)
        for (int i = 1; i <= 2; ++i) labels.set(i, j, k, Label::pelvis);
    for (int k = 10; k <= 11; ++k)
      for (int j = 8; j <= 9; ++j)
        for (int i = 7; i <= 8; ++i) labels.set(i, j, k, Label::pelvis);

    // Brute-force min/max over labeled indices.
    int lo[3] = {99, 99, 99}, hi[3] = {-1, -1, -1};
    for (int k = 0; k < 14; ++k)
      for (int j = 0; j < 12; ++j)
        for (int i = 0; i < 10; ++i)
          if (labels.is(i, j, k, Label::pelvis)) {
            lo[0] = std::min(lo[0], i);
            lo[1] = std::min(lo[1], j);
            lo[2] = std::min(lo[2], k);
            hi[0] = std::max(hi[0], i);
            hi[1] = std::max(hi[1], j);
            hi[2] = std::max(hi[2], k);
          }

    const ObjectVolume obj = extract_tight_subvolume(v, labels, Label::pelvis);
    CHECK(obj.volume.dims ==
          std::array<int, 3>{hi[0] - lo[0] + 1, hi[1] - lo[1] + 1,
                             hi[2] - lo[2] + 1});
    CHECK((obj.world_offset - v.voxel_center(lo[0], lo[1], lo[2])).norm() < 1e-12);
    // Voxels outside the label are zeroed inside the box.
    CHECK(obj.volume.at(3, 3, 3) == 0.f);
  }

  SUBCASE("empty label names the label") {
    CHECK_THROWS_WITH_AS(extract_tight_subvolume(v, labels, Label::cut),
                         doctest::Contains("cut"), std::runtime_error);
  }
}

TEST_CASE("world-coordinate consistency of sub-volume sampling") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> u(0, 50);
  Volume v = Volume::make(16, 14, 12, Vec3::Ones(), Vec3(3, -2, 7));
  LabelMap labels = LabelMap::make_like(v);
  for (int k = 3; k < 9; ++k)
    for (int j = 2; j < 10; ++j)
      for (int i = 4; i < 12; ++i) {
        labels.set(i, j, k, Label::fragment);
        v.at(i, j, k) = u(rng);
      }

  // Zero-masked full volume.
  Volume masked = v;
  for (std::size_t s = 0; s < masked.voxels.size(); ++s) {
    if (labels.voxels[s] != static_cast<std::uint8_t>(Label::fragment)) {
      masked.voxels[s] = 0.f;
    }
  }
  const ObjectVolume obj = extract_tight_subvolume(v, labels, Label::fragment);

  std::uniform_real_distribution<double> px(8.0, 13.0), py(1.0, 6.0), pz(11.0, 15.0);
  for (int t = 0; t < 500; ++t) {
    const Vec3 p(px(rng), py(rng), pz(rng));
    CHECK(trilinear_sample(obj.volume, p) ==
          doctest::Approx(trilinear_sample(masked, p)).epsilon(1e-6));
  }
}

TEST_CASE("NIfTI roundtrip preserves grid and values") {
  Volume v = Volume::make(7, 6, 5, Vec3(1.5, 2.0, 0.5), Vec3(-12, 8, 40));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(-100, 1500);
  for (auto& x : v.voxels) x = u(rng);

  for (const char* name : {"vol_test.nii", "vol_test.nii.gz"}) {
    save_volume_nifti(v, name);
    const Volume back = load_volume_nifti(name);
    REQUIRE(back.dims == v.dims);
    CHECK((back.spacing - v.spacing).norm() < 1e-5);
    CHECK((back.origin - v.origin).norm() < 1e-4);
    for (std::size_t i = 0; i < v.voxels.size(); ++i) {
      REQUIRE(back.voxels[i] == v.voxels[i]);
    }
  }
}

TEST_CASE("label map NIfTI roundtrip with sidecar") {
  LabelMap m;
  m.dims = {5, 4, 3};
  m.spacing = Vec3::Ones();
  m.origin = Vec3(1, 2, 3);
  m.voxels.assign(60, 0);
  m.set(1, 1, 1, Label::pelvis);
  m.set(2, 2, 2, Label::fragment);
  m.set(3, 3, 1, Label::femur_left);

  save_labels_nifti(m, "labels_test.nii.gz");
  const LabelMap back = load_labels_nifti("labels_test.nii.gz");
  REQUIRE(back.dims == m.dims);
  CHECK(back.voxels == m.voxels);
}

TEST_CASE("raw volume fallback roundtrip") {
  Volume v = Volume::make(3, 4, 5, Vec3(1, 1, 2), Vec3(0.5, 0, -4));
  for (std::size_t i = 0; i < v.voxels.size(); ++i) v.voxels[i] = float(i) * 0.25f;
  save_volume(v, "vol_test.raw");
  const Volume back = load_volume("vol_test.raw");
  REQUIRE(back.dims == v.dims);
  CHECK(back.voxels == v.voxels);
  CHECK((back.origin - v.origin).norm() < 1e-12);
}
