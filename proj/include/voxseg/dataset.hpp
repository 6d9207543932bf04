#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "voxseg/nifti.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

// Channel order is fixed: T1, T1ce, T2, FLAIR. Everything downstream indexes
// channels by position, so a reordering here would silently poison training.
struct ModalitySuffixes {
  std::string t1 = "_t1";
  std::string t1ce = "_t1ce";
  std::string t2 = "_t2";
  std::string flair = "_flair";
  std::string seg = "_seg";

  std::vector<std::string> channels() const { return {t1, t1ce, t2, flair}; }
};

namespace detail {

// <dir>/<base><suffix>.nii.gz preferred, plain .nii accepted.
inline std::string find_scan(const std::filesystem::path& dir, const std::string& base, const std::string& suffix) {
  for (const char* ext : {".nii.gz", ".nii"}) {
    std::filesystem::path p = dir / (base + suffix + ext);
    if (std::filesystem::exists(p)) return p.string();
  }
  return {};
}

}  // namespace detail

inline LabeledVolume load_subject(const std::string& subject_dir, const ModalitySuffixes& sfx = {}) {
  const std::filesystem::path dir(subject_dir);
  if (!std::filesystem::is_directory(dir)) throw IoFailure("subject directory missing: " + subject_dir);
  const std::string base = dir.filename().string();

  LabeledVolume v;
  for (const std::string& suffix : sfx.channels()) {
    const std::string path = detail::find_scan(dir, base, suffix);
    if (path.empty()) throw MissingModality(base + ": no " + suffix + " scan");
    NiftiVolume nv = read_nifti(path);
    if (!v.channels.empty() && !nv.image.same_shape(v.channels[0]))
      throw ShapeMismatch(base + ": " + suffix + " shape differs from " + sfx.t1);
    if (v.channels.empty()) v.header = nv.header;
    v.channels.push_back(std::move(nv.image));
  }

  const std::string seg_path = detail::find_scan(dir, base, sfx.seg);
  if (!seg_path.empty()) {
    LabelGrid labels = read_labels(seg_path);
    if (!labels.same_shape(v.channels[0])) throw ShapeMismatch(base + ": segmentation shape differs from scans");
    validate_labels(labels);
    v.labels = std::move(labels);
  }

  v.brain_mask = make_brain_mask(v.channels);
  return v;
}

inline std::vector<std::string> list_subjects(const std::string& root) {
  if (!std::filesystem::is_directory(root)) throw IoFailure("dataset root missing: " + root);
  std::vector<std::string> ids;
  for (const auto& entry : std::filesystem::directory_iterator(root))
    if (entry.is_directory()) ids.push_back(entry.path().filename().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Deterministic partition: folds depend only on the id set and the seed,
// never on input order. Sizes differ by at most one.
inline std::vector<std::vector<std::string>> kfold_split(std::vector<std::string> ids, int k, uint64_t seed) {
  if (k < 2) throw InvalidSpec("kfold_split: need k >= 2");
  if (ids.size() < static_cast<size_t>(k))
    throw TooFewSubjects("kfold_split: " + std::to_string(ids.size()) + " subjects for k=" + std::to_string(k));
  std::sort(ids.begin(), ids.end());

  Rng rng = Rng(seed).split("kfold");
  for (size_t i = ids.size() - 1; i > 0; --i)
    std::swap(ids[i], ids[rng.uniform_int(static_cast<uint64_t>(i + 1))]);

  const size_t n = ids.size(), q = n / k, r = n % k;
  std::vector<std::vector<std::string>> folds(static_cast<size_t>(k));
  size_t at = 0;
  for (size_t f = 0; f < folds.size(); ++f) {
    const size_t size = q + (f < r ? 1 : 0);
    folds[f].assign(ids.begin() + at, ids.begin() + at + size);
    at += size;
  }
  return folds;
}

}  // namespace voxseg
