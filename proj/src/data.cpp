#include "safl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "safl/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace safl::data {

namespace {

uint32_t read_be32(std::istream& in, const std::string& path, size_t offset) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error(path + ": truncated at byte " +
                             std::to_string(offset));
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) |
         (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_be32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("cannot open " + images_path);
  const uint32_t img_magic = read_be32(img, images_path, 0);
  if (img_magic != 0x00000803)
    throw std::runtime_error(images_path + ": bad image magic 0x" +
                             [&] {
                               char buf[16];
                               std::snprintf(buf, sizeof buf, "%08x", img_magic);
                               return std::string(buf);
                             }() +
                             " at byte 0 (want 0x00000803)");
  const uint32_t count = read_be32(img, images_path, 4);
  const uint32_t rows = read_be32(img, images_path, 8);
  const uint32_t cols = read_be32(img, images_path, 12);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("cannot open " + labels_path);
  const uint32_t lab_magic = read_be32(lab, labels_path, 0);
  if (lab_magic != 0x00000801)
    throw std::runtime_error(labels_path + ": bad label magic 0x" +
                             [&] {
                               char buf[16];
                               std::snprintf(buf, sizeof buf, "%08x", lab_magic);
                               return std::string(buf);
                             }() +
                             " at byte 0 (want 0x00000801)");
  const uint32_t lab_count = read_be32(lab, labels_path, 4);
  if (lab_count != count)
    throw std::runtime_error(labels_path + ": " + std::to_string(lab_count) +
                             " labels for " + std::to_string(count) +
                             " images");

  const size_t pixels = static_cast<size_t>(count) * rows * cols;
  std::vector<unsigned char> raw(pixels);
  if (!img.read(reinterpret_cast<char*>(raw.data()),
                static_cast<std::streamsize>(pixels)))
    throw std::runtime_error(
        images_path + ": truncated at byte " +
        std::to_string(16 + static_cast<size_t>(img.gcount())));

  Dataset ds;
  ds.class_count = 10;
  ds.images = Tensor({static_cast<int>(count), 1, static_cast<int>(rows),
                      static_cast<int>(cols)});
  for (size_t i = 0; i < pixels; ++i)
    ds.images.values[i] = static_cast<double>(raw[i]) / 255.0;

  std::vector<unsigned char> labraw(count);
  if (!lab.read(reinterpret_cast<char*>(labraw.data()), count))
    throw std::runtime_error(
        labels_path + ": truncated at byte " +
        std::to_string(8 + static_cast<size_t>(lab.gcount())));
  ds.labels.resize(count);
  for (uint32_t i = 0; i < count; ++i) {
    if (labraw[i] > 9)
      throw std::runtime_error(labels_path + ": label byte " +
                               std::to_string(int(labraw[i])) + " at item " +
                               std::to_string(i) + " outside 0..9");
    ds.labels[i] = labraw[i];
  }
  return ds;
}

Dataset load_cifar10(const std::string& dir_path, const std::string& split) {
  std::vector<std::string> files;
  if (split == "train") {
    for (int i = 1; i <= 5; ++i)
      files.push_back(dir_path + "/data_batch_" + std::to_string(i) + ".bin");
  } else if (split == "test") {
    files.push_back(dir_path + "/test_batch.bin");
  } else {
    throw std::invalid_argument("load_cifar10: split must be train or test");
  }

  constexpr size_t kRecord = 3073;
  std::vector<unsigned char> raw;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("missing CIFAR batch file " + f);
    const auto size = static_cast<size_t>(in.tellg());
    if (size == 0 || size % kRecord != 0)
      throw std::runtime_error(f + ": size " + std::to_string(size) +
                               " is not a multiple of 3073-byte records");
    in.seekg(0);
    const size_t off = raw.size();
    raw.resize(off + size);
    in.read(reinterpret_cast<char*>(raw.data() + off),
            static_cast<std::streamsize>(size));
  }

  const size_t count = raw.size() / kRecord;
  Dataset ds;
  ds.class_count = 10;
  ds.images = Tensor({static_cast<int>(count), 3, 32, 32});
  ds.labels.resize(count);
  for (size_t i = 0; i < count; ++i) {
    const unsigned char* rec = raw.data() + i * kRecord;
    if (rec[0] > 9)
      throw std::runtime_error("CIFAR record " + std::to_string(i) +
                               ": label " + std::to_string(int(rec[0])) +
                               " outside 0..9");
    ds.labels[i] = rec[0];
    double* dst = ds.images.data() + i * 3072;
    for (size_t p = 0; p < 3072; ++p)
      dst[p] = static_cast<double>(rec[1 + p]) / 255.0;
  }
  return ds;
}

namespace {

std::vector<std::vector<int>> class_pools(const Dataset& ds) {
  std::vector<std::vector<int>> pools(static_cast<size_t>(ds.class_count));
  for (int i = 0; i < ds.count(); ++i)
    pools[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])].push_back(i);
  return pools;
}

Dataset subset(const Dataset& ds, const std::vector<int>& idx) {
  Dataset out;
  out.class_count = ds.class_count;
  out.labels.reserve(idx.size());
  std::vector<int> shape = ds.images.shape;
  shape[0] = static_cast<int>(idx.size());
  out.images = Tensor(shape);
  const size_t row = ds.images.numel() / static_cast<size_t>(ds.count());
  for (size_t i = 0; i < idx.size(); ++i) {
    const size_t src = static_cast<size_t>(idx[i]);
    std::copy_n(ds.images.data() + src * row, row, out.images.data() + i * row);
    out.labels.push_back(ds.labels[src]);
  }
  return out;
}

}  // namespace

std::vector<ClientPartition> partition_noniid(
    const Dataset& train, const Dataset& test, int n_clients,
    int classes_per_client, std::optional<int> per_class_count,
    uint64_t seed) {
  const int cc = train.class_count;
  if (n_clients < 1) throw std::invalid_argument("partition: n_clients < 1");
  if (classes_per_client < 1 || classes_per_client > cc)
    throw std::invalid_argument("partition: classes_per_client outside [1, " +
                                std::to_string(cc) + "]");
  if (test.class_count != cc)
    throw std::invalid_argument("partition: train/test class_count mismatch");

  auto rng = make_rng(derive_seed(seed, 0x706172ull));
  auto train_pools = class_pools(train);
  auto test_pools = class_pools(test);
  for (auto& p : train_pools) std::shuffle(p.begin(), p.end(), rng);
  for (auto& p : test_pools) std::shuffle(p.begin(), p.end(), rng);

  // class list per client, then per-class taker counts
  std::vector<std::vector<int>> client_classes(
      static_cast<size_t>(n_clients));
  std::vector<int> takers(static_cast<size_t>(cc), 0);
  for (int i = 0; i < n_clients; ++i) {
    for (int j = 0; j < classes_per_client; ++j) {
      const int cls = (i * classes_per_client + j) % cc;
      client_classes[static_cast<size_t>(i)].push_back(cls);
      ++takers[static_cast<size_t>(cls)];
    }
  }

  std::vector<size_t> train_cursor(static_cast<size_t>(cc), 0);
  std::vector<size_t> test_cursor(static_cast<size_t>(cc), 0);
  std::vector<ClientPartition> out;
  std::uniform_real_distribution<double> logu(std::log(0.2), std::log(1.0));

  for (int i = 0; i < n_clients; ++i) {
    ClientPartition part;
    part.client_id = i;
    for (int cls : client_classes[static_cast<size_t>(i)]) {
      const auto& pool = train_pools[static_cast<size_t>(cls)];
      const int share =
          static_cast<int>(pool.size()) / takers[static_cast<size_t>(cls)];
      int want;
      if (per_class_count) {
        want = *per_class_count;
      } else {
        want = std::max(1, static_cast<int>(std::floor(
                               share * std::exp(logu(rng)))));
      }
      const size_t left = pool.size() - train_cursor[static_cast<size_t>(cls)];
      if (static_cast<size_t>(want) > left)
        throw std::runtime_error(
            "partition infeasible: class " + std::to_string(cls) + " has " +
            std::to_string(left) + " samples left, client " +
            std::to_string(i) + " wants " + std::to_string(want));
      for (int k = 0; k < want; ++k)
        part.train_indices.push_back(
            pool[train_cursor[static_cast<size_t>(cls)]++]);
      part.class_profile[cls] = want;

      const auto& tpool = test_pools[static_cast<size_t>(cls)];
      const size_t tleft =
          tpool.size() - test_cursor[static_cast<size_t>(cls)];
      if (tleft == 0)
        throw std::runtime_error("partition infeasible: test split has no "
                                 "samples left for class " +
                                 std::to_string(cls));
      const size_t tshare =
          std::max<size_t>(1, tpool.size() / takers[static_cast<size_t>(cls)]);
      const size_t twant =
          std::min({static_cast<size_t>(5) * want, tshare, tleft});
      for (size_t k = 0; k < twant; ++k)
        part.test_indices.push_back(
            tpool[test_cursor[static_cast<size_t>(cls)]++]);
    }
    part.train = subset(train, part.train_indices);
    part.test = subset(test, part.test_indices);
    out.push_back(std::move(part));
  }
  return out;
}

namespace {

// segment endpoints of a seven-segment digit in the unit box
struct Seg {
  double x0, y0, x1, y1;
};

const Seg kSegs[7] = {
    {0.2, 0.15, 0.8, 0.15},  // top
    {0.2, 0.15, 0.2, 0.50},  // top-left
    {0.8, 0.15, 0.8, 0.50},  // top-right
    {0.2, 0.50, 0.8, 0.50},  // middle
    {0.2, 0.50, 0.2, 0.85},  // bottom-left
    {0.8, 0.50, 0.8, 0.85},  // bottom-right
    {0.2, 0.85, 0.8, 0.85},  // bottom
};

const int kDigitSegs[10] = {
    0b1110111,  // 0: t tl tr bl br b
    0b0100100,  // 1: tr br
    0b1011101,  // 2
    0b1101101,  // 3
    0b0101110,  // 4
    0b1101011,  // 5
    0b1111011,  // 6
    0b0100101,  // 7
    0b1111111,  // 8
    0b1101111,  // 9
};

double seg_dist(const Seg& s, double x, double y) {
  const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((x - s.x0) * dx + (y - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double px = s.x0 + t * dx, py = s.y0 + t * dy;
  return std::hypot(x - px, y - py);
}

// bit i set -> segment kSegs[6 - i]... keep it simple: bit 6 = top, bit 0 = b
bool seg_on(int digit, int seg) { return (kDigitSegs[digit] >> (6 - seg)) & 1; }

void render_digit(int digit, int side, double* out, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> shift(-0.10, 0.10);
  std::uniform_real_distribution<double> scale(0.72, 1.12);
  std::uniform_real_distribution<double> rot(-0.30, 0.30);
  std::uniform_real_distribution<double> shear(-0.35, 0.35);
  std::uniform_real_distribution<double> thick(0.035, 0.095);
  std::uniform_real_distribution<double> wob(-0.055, 0.055);
  std::uniform_real_distribution<double> level(0.5, 1.0);
  std::uniform_real_distribution<double> trim(0.0, 0.18);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.09);

  const double sx = shift(rng), sy = shift(rng);
  const double scx = scale(rng), scy = scale(rng);
  const double th = rot(rng), sh = shear(rng);
  const double tk = thick(rng);
  const double ct = std::cos(th), st = std::sin(th);

  // each active stroke gets wobbled endpoints, trimmed ends, its own ink
  struct Stroke {
    Seg s;
    double ink;
  };
  Stroke strokes[7];
  int n = 0;
  for (int s = 0; s < 7; ++s) {
    if (!seg_on(digit, s)) continue;
    const Seg& g = kSegs[s];
    const double t0 = trim(rng), t1 = 1.0 - trim(rng);
    const double dx = g.x1 - g.x0, dy = g.y1 - g.y0;
    strokes[n].s = {g.x0 + t0 * dx + wob(rng), g.y0 + t0 * dy + wob(rng),
                    g.x0 + t1 * dx + wob(rng), g.y0 + t1 * dy + wob(rng)};
    strokes[n].ink = level(rng);
    ++n;
  }

  // low-frequency warp, like uneven pen pressure bending the strokes
  const double wax = 0.045 * unit(rng), way = 0.045 * unit(rng);
  const double wfx = 4.0 + 5.0 * unit(rng), wfy = 4.0 + 5.0 * unit(rng);
  const double wpx = 6.2831853 * unit(rng), wpy = 6.2831853 * unit(rng);

  // a stray smudge now and then
  const bool smudge = unit(rng) < 0.35;
  const double smx = 0.15 + 0.7 * unit(rng), smy = 0.15 + 0.7 * unit(rng);
  const double smr = 0.03 + 0.04 * unit(rng), smi = 0.25 + 0.35 * unit(rng);

  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      // map pixel center into glyph space (inverse of the sample transform)
      double x = (c + 0.5) / side - 0.5 - sx;
      double y = (r + 0.5) / side - 0.5 - sy;
      x -= sh * y;
      double gx = (ct * x + st * y) / scx + 0.5;
      double gy = (-st * x + ct * y) / scy + 0.5;
      gx += wax * std::sin(wfx * gy + wpx);
      gy += way * std::sin(wfy * gx + wpy);
      double v = 0.0;
      for (int s = 0; s < n; ++s) {
        const double d = seg_dist(strokes[s].s, gx, gy);
        const double a =
            std::clamp(1.0 - (d - tk * 0.4) / (tk * 0.9), 0.0, 1.0);
        v = std::max(v, a * strokes[s].ink);
      }
      if (smudge) {
        const double d = std::hypot(gx - smx, gy - smy);
        v = std::max(v, smi * std::clamp(1.0 - d / smr, 0.0, 1.0));
      }
      v = std::clamp(v + noise(rng), 0.0, 1.0);
      out[r * side + c] = v;
    }
}

}  // namespace

std::vector<std::string> write_digit_corpus(const std::string& dir,
                                            int train_per_class,
                                            int test_per_class,
                                            uint64_t seed) {
  fs::create_directories(dir);
  const std::vector<std::string> names = {
      dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte",
      dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte"};

  const int side = 28;
  auto emit = [&](const std::string& img_path, const std::string& lab_path,
                  int per_class, uint64_t salt) {
    const int total = per_class * 10;
    // interleave classes deterministically, then shuffle order
    std::vector<int> labels;
    labels.reserve(static_cast<size_t>(total));
    for (int k = 0; k < per_class; ++k)
      for (int d = 0; d < 10; ++d) labels.push_back(d);
    auto order_rng = make_rng(derive_seed(seed, salt, 0xabcdull));
    std::shuffle(labels.begin(), labels.end(), order_rng);

    std::ofstream img(img_path, std::ios::binary);
    std::ofstream lab(lab_path, std::ios::binary);
    if (!img || !lab)
      throw std::runtime_error("cannot write corpus under " + dir);
    write_be32(img, 0x00000803);
    write_be32(img, static_cast<uint32_t>(total));
    write_be32(img, side);
    write_be32(img, side);
    write_be32(lab, 0x00000801);
    write_be32(lab, static_cast<uint32_t>(total));

    std::vector<double> plane(static_cast<size_t>(side) * side);
    std::vector<unsigned char> bytes(plane.size());
    for (int i = 0; i < total; ++i) {
      const int d = labels[static_cast<size_t>(i)];
      auto rng = make_rng(derive_seed(seed, salt, static_cast<uint64_t>(i),
                                      static_cast<uint64_t>(d)));
      render_digit(d, side, plane.data(), rng);
      for (size_t p = 0; p < plane.size(); ++p)
        bytes[p] = static_cast<unsigned char>(std::lround(plane[p] * 255.0));
      img.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
      lab.put(static_cast<char>(d));
    }
  };

  emit(names[0], names[1], train_per_class, 0x7472ull);
  emit(names[2], names[3], test_per_class, 0x7465ull);
  return names;
}

std::vector<std::string> find_idx_pair(const std::string& root,
                                       const std::string& split) {
  const std::string img_stem =
      split == "train" ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
  const std::string lab_stem =
      split == "train" ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte";
  for (const char* sub : {"", "/MNIST/raw", "/mnist", "/MNIST"}) {
    const std::string base = root + sub;
    const std::string img = base + "/" + img_stem;
    const std::string lab = base + "/" + lab_stem;
    if (fs::exists(img) && fs::exists(lab)) return {img, lab};
  }
  return {};
}

SynthData synth_cluster_data(int n_clients, int n_clusters,
                             int samples_per_client, uint64_t seed) {
  if (n_clusters < 1 || n_clients < 1)
    throw std::invalid_argument("synth_cluster_data: bad sizes");
  if (n_clients % n_clusters != 0)
    throw std::invalid_argument(
        "synth_cluster_data: n_clients must be divisible by n_clusters");

  const int side = 8, classes = 10;
  const int block = (classes + n_clusters - 1) / n_clusters;
  auto class_group = [&](int cls) {
    return std::min(cls / block, n_clusters - 1);
  };

  // class pattern: an oriented bar through a class-specific offset
  auto render = [&](int cls, double* out, std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, 0.10);
    const double theta = 3.14159265358979 * cls / classes;
    const double ox = 0.12 * ((cls % 3) - 1);
    const double oy = 0.12 * ((cls / 3 % 3) - 1);
    const double nx = -std::sin(theta), ny = std::cos(theta);
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        const double x = (c + 0.5) / side - 0.5 - ox;
        const double y = (r + 0.5) / side - 0.5 - oy;
        const double d = std::abs(nx * x + ny * y);
        double v = std::clamp(1.2 - d / 0.12, 0.0, 1.0);
        v = std::clamp(v + noise(rng), 0.0, 1.0);
        out[r * side + c] = v;
      }
  };

  SynthData out;
  const int per_cluster = n_clients / n_clusters;
  for (int i = 0; i < n_clients; ++i) {
    const int g = i / per_cluster;
    out.true_cluster.push_back(g);
    std::vector<int> my_classes;
    for (int cls = 0; cls < classes; ++cls)
      if (class_group(cls) == g) my_classes.push_back(cls);

    auto make_split = [&](int count, uint64_t salt) {
      Dataset ds;
      ds.class_count = classes;
      ds.images = Tensor({count, 1, side, side});
      ds.labels.resize(static_cast<size_t>(count));
      auto rng = make_rng(derive_seed(seed, salt, static_cast<uint64_t>(i)));
      for (int s = 0; s < count; ++s) {
        const int cls =
            my_classes[static_cast<size_t>(s) % my_classes.size()];
        ds.labels[static_cast<size_t>(s)] = cls;
        render(cls, ds.images.data() + static_cast<size_t>(s) * side * side,
               rng);
      }
      return ds;
    };

    ClientPartition part;
    part.client_id = i;
    part.train = make_split(samples_per_client, 0x747261696eull);
    part.test = make_split(std::max(10, samples_per_client / 2), 0x74657374ull);
    for (int lbl : part.train.labels) part.class_profile[lbl]++;
    out.clients.push_back(std::move(part));
  }
  return out;
}

void write_partition_manifest(const std::vector<ClientPartition>& parts,
                              const std::string& path) {
  json arr = json::array();
  for (const auto& p : parts) {
    json profile = json::object();
    for (const auto& [cls, cnt] : p.class_profile)
      profile[std::to_string(cls)] = cnt;
    arr.push_back({{"client_id", p.client_id},
                   {"class_profile", profile},
                   {"train_indices", p.train_indices},
                   {"test_indices", p.test_indices}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << arr.dump(1) << "\n";
}

}  // namespace safl::data
