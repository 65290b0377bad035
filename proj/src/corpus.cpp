#include "tlm/corpus.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

namespace tlm {

namespace {

const std::array<std::pair<const char*, Material>, 9> kMaterials = {{
    {"fabric", Material::fabric},
    {"food", Material::food},
    {"leather", Material::leather},
    {"metal", Material::metal},
    {"paper", Material::paper},
    {"plastic", Material::plastic},
    {"rubber", Material::rubber},
    {"silicone", Material::silicone},
    {"wood", Material::wood},
}};

}  // namespace

Material material_from_string(const std::string& s) {
  for (const auto& [name, m] : kMaterials)
    if (s == name) return m;
  fail("unknown material '" + s + "'");
}

std::string to_string(Material m) {
  for (const auto& [name, v] : kMaterials)
    if (v == m) return name;
  fail("invalid material value");
}

std::string to_string(Hardness h) {
  switch (h) {
    case Hardness::soft: return "soft";
    case Hardness::moderately_hard: return "moderately_hard";
    case Hardness::hard: return "hard";
  }
  fail("invalid hardness value");
}

std::string to_string(Roughness r) {
  switch (r) {
    case Roughness::smooth: return "smooth";
    case Roughness::slightly_rough: return "slightly_rough";
    case Roughness::rough: return "rough";
  }
  fail("invalid roughness value");
}

std::string to_string(Bumpiness b) {
  switch (b) {
    case Bumpiness::no_bumps: return "no_bumps";
    case Bumpiness::small_bumps: return "small_bumps";
    case Bumpiness::big_bumps: return "big_bumps";
  }
  fail("invalid bumpiness value");
}

std::string phrase(Hardness h) {
  switch (h) {
    case Hardness::soft: return "soft";
    case Hardness::moderately_hard: return "moderately hard";
    case Hardness::hard: return "hard";
  }
  fail("invalid hardness value");
}

std::string phrase(Roughness r) {
  switch (r) {
    case Roughness::smooth: return "smooth";
    case Roughness::slightly_rough: return "slightly rough";
    case Roughness::rough: return "rough";
  }
  fail("invalid roughness value");
}

std::string phrase(Bumpiness b) {
  switch (b) {
    case Bumpiness::no_bumps: return "no bumps";
    case Bumpiness::small_bumps: return "small bumps";
    case Bumpiness::big_bumps: return "big bumps";
  }
  fail("invalid bumpiness value");
}

PropertyLabels labels_from_levels(int h, int r, int b) {
  require(h >= 0 && h <= 2 && r >= 0 && r <= 2 && b >= 0 && b <= 2,
          "labels_from_levels: level outside {0,1,2}");
  return {Hardness(h), Roughness(r), Bumpiness(b)};
}

std::string frame_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04d.png", index);
  return buf;
}

Frame load_video_frame(const VideoRef& ref, int index) {
  require(index >= 0 && index < ref.frame_count, "load_video_frame: index out of range");
  return read_png_rgb(ref.dir / frame_file_name(index));
}

TactileVideo load_video(const VideoRef& ref) {
  TactileVideo video;
  video.video_id = ref.video_id;
  video.sample_name = ref.sample_name;
  video.source = ref.source;
  video.frames.reserve(std::size_t(ref.frame_count));
  for (int i = 0; i < ref.frame_count; ++i) video.frames.push_back(load_video_frame(ref, i));
  require(!video.frames.empty(), "load_video: no frames in " + ref.dir.string());
  for (const Frame& f : video.frames)
    require(f.rows() == video.frames[0].rows() && f.cols() == video.frames[0].cols(),
            "load_video: frame shapes differ in " + ref.dir.string());
  return video;
}

const ObjectRecord* CorpusIndex::find_object(const std::string& sample_name) const {
  for (const ObjectRecord& o : objects)
    if (o.sample_name == sample_name) return &o;
  return nullptr;
}

const ObjectRecord* CorpusIndex::find_object_by_id(const std::string& object_id) const {
  for (const ObjectRecord& o : objects)
    if (o.object_id == object_id) return &o;
  return nullptr;
}

std::vector<const VideoRef*> CorpusIndex::videos_of(const std::string& sample_name) const {
  std::vector<const VideoRef*> out;
  for (const VideoRef& v : videos)
    if (v.sample_name == sample_name) out.push_back(&v);
  return out;
}

int aggregate_ratings(const std::vector<int>& ratings, const std::string& sample_name,
                      const std::string& property_name) {
  require(!ratings.empty(), "aggregate_ratings: no ratings");
  double sum = 0;
  for (int r : ratings) {
    if (r < 0 || r > 2)
      fail("annotation for '" + sample_name + "': " + property_name + " rating " +
           std::to_string(r) + " outside {0,1,2}");
    sum += r;
  }
  // Round half away from zero (lround's rule). Three raters in {0,1,2} give
  // means in steps of 1/3, so ties only arise for other annotator counts.
  return int(std::lround(sum / double(ratings.size())));
}

PropertyLabels aggregate_annotations(const AnnotationTriple& triple) {
  auto agg = [&](const std::array<int, 3>& a, const char* name) {
    return aggregate_ratings({a.begin(), a.end()}, triple.sample_name, name);
  };
  return labels_from_levels(agg(triple.hardness, "hardness"), agg(triple.roughness, "roughness"),
                            agg(triple.bumpiness, "bumpiness"));
}

double icc3k(const Eigen::MatrixXd& ratings) {
  const Eigen::Index n = ratings.rows(), k = ratings.cols();
  require(n >= 2 && k >= 2, "icc3k: need at least 2 targets and 2 raters");
  const double grand = ratings.mean();
  const Eigen::VectorXd row_means = ratings.rowwise().mean();
  const Eigen::RowVectorXd col_means = ratings.colwise().mean();
  const double ss_rows = double(k) * (row_means.array() - grand).square().sum();
  const double ss_cols = double(n) * (col_means.array() - grand).square().sum();
  const double ss_total = (ratings.array() - grand).square().sum();
  const double ss_err = ss_total - ss_rows - ss_cols;
  const double ms_rows = ss_rows / double(n - 1);
  const double ms_err = ss_err / double((n - 1) * (k - 1));
  if (ms_rows <= 0.0) fail("icc3k: degenerate ratings");
  return (ms_rows - ms_err) / ms_rows;
}

SplitAssignment make_splits(const std::vector<std::string>& sample_names,
                            std::array<double, 3> ratios, std::uint64_t seed) {
  require(!sample_names.empty(), "make_splits: empty sample list");
  const double sum = ratios[0] + ratios[1] + ratios[2];
  require(std::abs(sum - 1.0) <= 1e-9, "make_splits: ratios must sum to 1");
  const auto n = std::ptrdiff_t(sample_names.size());
  const auto n_val = std::ptrdiff_t(std::floor(double(n) * ratios[1] + 1e-9));
  const auto n_test = std::ptrdiff_t(std::floor(double(n) * ratios[2] + 1e-9));
  const auto n_train = n - n_val - n_test;
  require(n_train >= 0, "make_splits: ratios leave no training samples");

  std::vector<std::string> pool = sample_names;
  std::sort(pool.begin(), pool.end());
  Rng rng(seed);
  rng.shuffle(pool);

  SplitAssignment out;
  out.train.assign(pool.begin(), pool.begin() + n_train);
  out.val.assign(pool.begin() + n_train, pool.begin() + n_train + n_val);
  out.test.assign(pool.begin() + n_train + n_val, pool.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

PropertyStats property_stats(const CorpusIndex& corpus) {
  PropertyStats stats;
  for (const auto& [name, labels] : corpus.labels) {
    (void)name;
    const auto [h, r, b] = labels.levels();
    stats.hardness_counts[std::size_t(h)] += 1;
    stats.roughness_counts[std::size_t(r)] += 1;
    stats.bumpiness_counts[std::size_t(b)] += 1;
    stats.combination_counts[std::size_t(h * 9 + r * 3 + b)] += 1;
    stats.total += 1;
  }
  auto pct = [&](const std::array<int, 3>& counts) {
    std::array<double, 3> out{};
    for (std::size_t i = 0; i < 3; ++i) {
      const double p = stats.total > 0 ? 100.0 * counts[i] / double(stats.total) : 0.0;
      out[i] = std::round(p * 100.0) / 100.0;
    }
    return out;
  };
  stats.hardness_pct = pct(stats.hardness_counts);
  stats.roughness_pct = pct(stats.roughness_counts);
  stats.bumpiness_pct = pct(stats.bumpiness_counts);
  return stats;
}

namespace {

int parse_rating(const std::string& cell, const std::string& file, std::size_t row) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(cell, &pos);
    if (pos != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    fail(file + " row " + std::to_string(row) + ": rating '" + cell + "' is not an integer");
  }
}

std::vector<ObjectRecord> load_objects_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  require(!rows.empty(), path.string() + ": empty file");
  const std::vector<std::string> header = {"object_id", "display_name", "sample_name", "material",
                                           "part_of"};
  require(rows[0] == header,
          path.string() + ": header must be object_id,display_name,sample_name,material,part_of");
  std::vector<ObjectRecord> objects;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const std::string where = path.string() + " row " + std::to_string(i + 1);
    if (r.size() != 5) fail(where + ": expected 5 columns, got " + std::to_string(r.size()));
    ObjectRecord rec;
    rec.object_id = r[0];
    rec.display_name = r[1];
    rec.sample_name = r[2];
    if (rec.object_id.empty()) fail(where + ": empty object_id");
    if (rec.display_name.empty()) fail(where + ": empty display_name");
    if (rec.sample_name.empty()) fail(where + ": empty sample_name");
    if (!r[3].empty()) {
      try {
        rec.material = material_from_string(r[3]);
      } catch (const Error&) {
        fail(where + ": unknown material '" + r[3] + "'");
      }
    }
    if (!r[4].empty()) rec.part_of = r[4];
    objects.push_back(std::move(rec));
  }
  return objects;
}

std::map<std::string, AnnotationTriple> load_annotations_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  require(!rows.empty(), path.string() + ": empty file");
  const std::vector<std::string> header = {"sample_name", "h1", "h2", "h3", "r1",
                                           "r2",          "r3", "b1", "b2", "b3"};
  require(rows[0] == header,
          path.string() + ": header must be sample_name,h1,h2,h3,r1,r2,r3,b1,b2,b3");
  std::map<std::string, AnnotationTriple> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const std::string where = path.string() + " row " + std::to_string(i + 1);
    if (r.size() != 10) fail(where + ": expected 10 columns, got " + std::to_string(r.size()));
    AnnotationTriple t;
    t.sample_name = r[0];
    for (int j = 0; j < 3; ++j) {
      t.hardness[std::size_t(j)] = parse_rating(r[std::size_t(1 + j)], path.string(), i + 1);
      t.roughness[std::size_t(j)] = parse_rating(r[std::size_t(4 + j)], path.string(), i + 1);
      t.bumpiness[std::size_t(j)] = parse_rating(r[std::size_t(7 + j)], path.string(), i + 1);
    }
    if (out.count(t.sample_name)) fail(where + ": duplicate sample_name '" + t.sample_name + "'");
    out.emplace(t.sample_name, std::move(t));
  }
  return out;
}

std::vector<VideoRef> scan_videos(const std::filesystem::path& dir) {
  std::vector<VideoRef> videos;
  if (!std::filesystem::exists(dir)) return videos;
  std::vector<std::filesystem::path> sample_dirs;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory()) sample_dirs.push_back(e.path());
  std::sort(sample_dirs.begin(), sample_dirs.end());
  for (const auto& sd : sample_dirs) {
    std::vector<std::filesystem::path> video_dirs;
    for (const auto& e : std::filesystem::directory_iterator(sd))
      if (e.is_directory()) video_dirs.push_back(e.path());
    std::sort(video_dirs.begin(), video_dirs.end());
    for (const auto& vd : video_dirs) {
      VideoRef ref;
      ref.sample_name = sd.filename().string();
      // Directory basenames repeat across samples; qualify for a unique id.
      ref.video_id = ref.sample_name + "/" + vd.filename().string();
      ref.dir = vd;
      while (std::filesystem::exists(vd / frame_file_name(ref.frame_count))) ref.frame_count += 1;
      if (ref.frame_count == 0)
        fail(vd.string() + ": no frame_0000.png; frames must be numbered contiguously from 0");
      videos.push_back(std::move(ref));
    }
  }
  return videos;
}

}  // namespace

CorpusIndex load_corpus(const std::filesystem::path& dir) {
  require(std::filesystem::exists(dir), "corpus directory not found: " + dir.string());
  CorpusIndex corpus;
  corpus.root = dir;
  corpus.objects = load_objects_csv(dir / "objects.csv");
  corpus.annotations = load_annotations_csv(dir / "annotations.csv");
  for (const auto& [name, triple] : corpus.annotations)
    corpus.labels.emplace(name, aggregate_annotations(triple));
  corpus.videos = scan_videos(dir / "videos");
  if (std::filesystem::exists(dir / "splits.json"))
    corpus.splits = read_splits_json(dir / "splits.json");
  return corpus;
}

void validate_corpus(const CorpusIndex& corpus, bool require_splits) {
  std::set<std::string> sample_names, object_ids;
  for (const ObjectRecord& o : corpus.objects) {
    if (o.display_name.empty()) fail("object '" + o.object_id + "': empty display_name");
    if (!sample_names.insert(o.sample_name).second)
      fail("duplicate sample_name '" + o.sample_name + "'");
    if (!object_ids.insert(o.object_id).second) fail("duplicate object_id '" + o.object_id + "'");
  }
  for (const ObjectRecord& o : corpus.objects)
    if (o.part_of && !object_ids.count(*o.part_of))
      fail("object '" + o.object_id + "': part_of refers to unknown object '" + *o.part_of + "'");

  std::set<std::string> annotated;
  for (const auto& [name, triple] : corpus.annotations) {
    (void)triple;
    if (!sample_names.count(name)) fail("annotation for unknown sample '" + name + "'");
    if (!corpus.labels.count(name)) fail("sample '" + name + "' has annotations but no labels");
    annotated.insert(name);
  }
  std::set<std::string> video_ids;
  for (const VideoRef& v : corpus.videos) {
    if (!corpus.labels.count(v.sample_name))
      fail("video " + v.dir.string() + ": sample '" + v.sample_name + "' has no labels");
    if (v.frame_count < 1) fail("video " + v.dir.string() + ": no frames");
    if (!video_ids.insert(v.video_id).second) fail("duplicate video_id '" + v.video_id + "'");
  }

  const auto& s = corpus.splits;
  const bool have_splits = !(s.train.empty() && s.val.empty() && s.test.empty());
  if (!have_splits) {
    if (require_splits) fail("corpus has no split assignment (splits.json missing or empty)");
    return;
  }
  std::set<std::string> seen;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (const std::string& name : *part) {
      if (!annotated.count(name)) fail("split entry '" + name + "' is not an annotated sample");
      if (!seen.insert(name).second) fail("sample '" + name + "' appears in two splits");
    }
  for (const std::string& name : annotated)
    if (!seen.count(name)) fail("annotated sample '" + name + "' missing from splits");
}

void write_splits_json(const std::filesystem::path& path, const SplitAssignment& splits) {
  nlohmann::json j;
  j["train"] = splits.train;
  j["val"] = splits.val;
  j["test"] = splits.test;
  write_text_file(path, j.dump(2) + "\n");
}

SplitAssignment read_splits_json(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(path.string() + ": invalid JSON: " + e.what());
  }
  SplitAssignment out;
  try {
    out.train = j.at("train").get<std::vector<std::string>>();
    out.val = j.at("val").get<std::vector<std::string>>();
    out.test = j.at("test").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(path.string() + ": expected keys train/val/test with string arrays: " + e.what());
  }
  return out;
}

}  // namespace tlm
