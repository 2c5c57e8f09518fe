#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "safl/tensor.hpp"

namespace safl::data {

struct Dataset {
  Tensor images;  // count x C x H x W, values in [0, 1]
  std::vector<int> labels;
  int class_count = 0;

  int count() const { return static_cast<int>(labels.size()); }
};

struct ClientPartition {
  int client_id = 0;
  Dataset train;
  Dataset test;
  std::map<int, int> class_profile;  // class -> train sample count
  std::vector<int> train_indices;    // positions in the source train set
  std::vector<int> test_indices;     // positions in the source test set
};

// Big-endian IDX pair (image magic 0x00000803, label magic 0x00000801).
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path);

// CIFAR-10 binary batches: 3073-byte records, label byte then 3072 pixels.
// split == "train" reads data_batch_1..5.bin, "test" reads test_batch.bin.
Dataset load_cifar10(const std::string& dir_path,
                     const std::string& split = "train");

// Rotating non-IID split: client i draws classes_per_client classes starting
// at (i * classes_per_client) mod class_count, sample indices disjoint across
// clients. per_class_count fixes exact train counts; otherwise counts are
// log-uniform in [0.2, 1.0] of the per-class share. Test sets are carved from
// `test` over the same classes, capped at 5x the train count per class.
std::vector<ClientPartition> partition_noniid(
    const Dataset& train, const Dataset& test, int n_clients,
    int classes_per_client, std::optional<int> per_class_count, uint64_t seed);

struct SynthData {
  std::vector<ClientPartition> clients;
  std::vector<int> true_cluster;  // ground truth, one entry per client
};

// 8x8 single-channel pattern classes grouped so each cluster sees a disjoint
// label block; cluster id of client i is i / (n_clients / n_clusters).
SynthData synth_cluster_data(int n_clients, int n_clusters,
                             int samples_per_client, uint64_t seed);

void write_partition_manifest(const std::vector<ClientPartition>& parts,
                              const std::string& path);

// Procedural 28x28 digit-glyph corpus written as genuine IDX files
// (train-images-idx3-ubyte etc.) so runs work without the real MNIST files.
// Returns the four file paths {train_images, train_labels, test_images,
// test_labels}.
std::vector<std::string> write_digit_corpus(const std::string& dir,
                                            int train_per_class,
                                            int test_per_class, uint64_t seed);

// Locates an IDX pair under root: accepts both original MNIST names and the
// generated corpus names. Returns {images, labels} or empty when absent.
std::vector<std::string> find_idx_pair(const std::string& root,
                                       const std::string& split);

}  // namespace safl::data
