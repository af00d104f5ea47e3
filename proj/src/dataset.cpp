#include "netwarp/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "netwarp/tensor_io.hpp"

namespace netwarp {

namespace fs = std::filesystem;

void write_pgm(const fs::path& path, const LabelMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out << "P5\n" << map.width << ' ' << map.height << "\n255\n";
  for (int v : map.labels) {
    if (v < 0 || v > 255) throw ValidationError("PGM value out of range: " + std::to_string(v));
    out.put(static_cast<char>(v));
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

LabelMap read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0;
  int maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (!in || magic != "P5" || maxval != 255 || w == 0 || h == 0) {
    throw FormatError("unsupported PGM header in " + path.string());
  }
  in.get();
  LabelMap map(h, w);
  std::vector<char> buf(w * h);
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw FormatError("truncated PGM payload in " + path.string());
  }
  for (std::size_t i = 0; i < buf.size(); ++i) map.labels[i] = static_cast<unsigned char>(buf[i]);
  return map;
}

Dataset build_dataset(const DatasetSpec& spec) {
  if (spec.labels_every < 1) throw ValidationError("labels_every must be >= 1");
  Dataset ds;
  ds.num_classes = spec.scene.num_classes;
  for (int c = 1; c < ds.num_classes; ++c) ds.instance_classes.push_back(c);
  std::mt19937_64 rng(spec.seed);
  auto make = [&](bool train) {
    VideoSample s;
    s.scene = generate(random_scene(spec.scene, rng()));
    for (std::size_t t = 0; t < s.scene.size(); ++t) {
      if (t == 0 || !spec.estimate_flow) {
        s.est_flow.emplace_back(std::nullopt);
      } else {
        s.est_flow.emplace_back(
            block_match_flow(s.scene.frames[t], s.scene.frames[t - 1], spec.block_match));
      }
      s.labeled.push_back(!train || t % static_cast<std::size_t>(spec.labels_every) == 0);
    }
    return s;
  };
  for (int i = 0; i < spec.num_train; ++i) ds.train.push_back(make(true));
  for (int i = 0; i < spec.num_test; ++i) ds.test.push_back(make(false));
  return ds;
}

namespace {

std::string numbered(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03zu.%s", stem, i, ext);
  return buf;
}

}  // namespace

void save_sequence(const fs::path& dir, const VideoSample& sample) {
  fs::create_directories(dir);
  const SceneSequence& s = sample.scene;
  std::ostringstream manifest;
  for (std::size_t t = 0; t < s.size(); ++t) {
    const std::string frame = numbered("frame", t, "nwt");
    const std::string label = numbered("label", t, "pgm");
    const std::string inst = numbered("inst", t, "pgm");
    const std::string occ = numbered("occ", t, "pgm");
    save_tensor(dir / frame, s.frames[t]);
    write_pgm(dir / label, s.labels[t]);
    write_pgm(dir / inst, s.instances[t]);
    write_pgm(dir / occ, s.occlusion[t]);
    std::string gt = "-", est = "-";
    if (s.gt_flow[t]) {
      gt = numbered("flow_gt", t, "flo");
      write_flo(dir / gt, *s.gt_flow[t]);
    }
    if (t < sample.est_flow.size() && sample.est_flow[t]) {
      est = numbered("flow_bm", t, "flo");
      write_flo(dir / est, *sample.est_flow[t]);
    }
    const bool labeled = t < sample.labeled.size() ? sample.labeled[t] : true;
    manifest << t << ' ' << frame << ' ' << (labeled ? label : "-") << ' ' << inst << ' ' << gt
             << ' ' << est << ' ' << occ << '\n';
  }
  std::ofstream out(dir / "manifest.txt");
  out << manifest.str();
  if (!out) throw FormatError("cannot write manifest in " + dir.string());
}

VideoSample load_sequence(const fs::path& dir, int num_classes) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw FormatError("missing manifest in " + dir.string());
  VideoSample sample;
  sample.scene.num_classes = num_classes;
  std::string line;
  std::size_t expected = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t index = 0;
    std::string frame, label, inst, gt, est, occ;
    if (!(ls >> index >> frame >> label >> inst >> gt >> est >> occ)) {
      throw FormatError("malformed manifest line in " + dir.string() + ": " + line);
    }
    if (index != expected++) throw FormatError("manifest frames out of order in " + dir.string());
    SceneSequence& s = sample.scene;
    s.frames.push_back(load_tensor(dir / frame));
    // Label files exist for every frame; "-" only marks frames withheld from training.
    s.labels.push_back(read_pgm(dir / (label == "-" ? numbered("label", index, "pgm") : label)));
    s.instances.push_back(read_pgm(dir / inst));
    s.occlusion.push_back(read_pgm(dir / occ));
    s.gt_flow.push_back(gt == "-" ? std::nullopt : std::optional(read_flo(dir / gt)));
    sample.est_flow.push_back(est == "-" ? std::nullopt : std::optional(read_flo(dir / est)));
    sample.labeled.push_back(label != "-");
  }
  if (sample.scene.frames.empty()) throw FormatError("empty manifest in " + dir.string());
  return sample;
}

void save_dataset(const fs::path& root, const Dataset& dataset) {
  fs::create_directories(root);
  std::ostringstream index;
  index << "netwarp-dataset 1\n";
  index << "num_classes " << dataset.num_classes << '\n';
  index << "instance_classes";
  for (int c : dataset.instance_classes) index << ' ' << c;
  index << '\n';
  auto emit = [&](const std::vector<VideoSample>& split, const char* name) {
    for (std::size_t i = 0; i < split.size(); ++i) {
      char dir[32];
      std::snprintf(dir, sizeof dir, "%s/seq_%03zu", name, i);
      const std::string rel = dir;
      save_sequence(root / rel, split[i]);
      index << "sequence " << name << ' ' << rel << '\n';
    }
  };
  emit(dataset.train, "train");
  emit(dataset.test, "test");
  std::ofstream out(root / "index.txt");
  out << index.str();
  if (!out) throw FormatError("cannot write dataset index in " + root.string());
}

Dataset load_dataset(const fs::path& root) {
  std::ifstream in(root / "index.txt");
  if (!in) throw FormatError("missing dataset index: " + (root / "index.txt").string());
  Dataset ds;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "netwarp-dataset") {
      header = true;
    } else if (key == "num_classes") {
      ls >> ds.num_classes;
    } else if (key == "instance_classes") {
      int c;
      while (ls >> c) ds.instance_classes.push_back(c);
    } else if (key == "sequence") {
      std::string split, rel;
      ls >> split >> rel;
      VideoSample s = load_sequence(root / rel, ds.num_classes);
      if (split == "train") {
        ds.train.push_back(std::move(s));
      } else if (split == "test") {
        ds.test.push_back(std::move(s));
      } else {
        throw FormatError("unknown split '" + split + "' in dataset index");
      }
    } else {
      throw FormatError("unknown dataset index key '" + key + "'");
    }
  }
  if (!header) throw FormatError("not a dataset index: " + root.string());
  return ds;
}

}  // namespace netwarp
