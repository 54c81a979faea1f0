#pragma once

#include "tamcl/embedding.hpp"
#include "tamcl/random.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace tamcl {

/// One synthetic task. Labels are local to the task (0 .. n_labels-1); the
/// model's slice-mapped heads keep label spaces of different tasks disjoint.
struct TaskSpec {
    int task_id = 0;
    std::string name;
    std::size_t n_train = 2000;
    std::size_t n_test = 500;
    std::size_t n_labels = 2;
    std::size_t image_height = 16;
    std::size_t image_width = 16;
    std::size_t channels = 1;
    std::size_t text_length = 8;
    std::size_t vocab = 32;
    std::size_t motif = 4;  // side of the planted square pattern
    bool dual_image = false;
    /// Label = (sum of image classes + text class) mod n_labels, so neither
    /// modality alone determines it. Otherwise every modality carries the label.
    bool cross_modal = false;
    std::uint64_t seed = 1;
    double margin = 0.8;  // motif contrast in (0, 1]
    double noise = 0.1;   // pixel noise standard deviation

    bool operator==(const TaskSpec&) const = default;
};

struct TaskData {
    std::vector<RawExample> train;
    std::vector<RawExample> test;
};

/// The task-specific signals the labels are planted from.
struct PlantedSignals {
    std::vector<std::vector<double>> motifs;  // per class, motif*motif*C values in {-1, +1}
    std::vector<int> motif_tokens;            // per class
    std::vector<int> filler_tokens;
};

void validate(const TaskSpec& spec);
PlantedSignals planted_signals(const TaskSpec& spec);

/// Label implied by the planted classes.
int planted_label(const TaskSpec& spec, std::span<const int> image_classes, int text_class);

/// Renders one example whose images carry `image_classes` and whose text
/// carries `text_class`; the label is planted_label(...).
RawExample plant_example(const TaskSpec& spec, const PlantedSignals& signals, std::span<const int> image_classes,
                         int text_class, Rng& rng);

/// Deterministic under spec.seed; class-balanced within one example.
TaskData generate_task(const TaskSpec& spec);

std::vector<TaskSpec> load_manifest(const std::filesystem::path& path);
std::vector<TaskSpec> parse_manifest(const std::string& text);
std::string format_manifest(std::span<const TaskSpec> specs);
void write_manifest(const std::filesystem::path& path, std::span<const TaskSpec> specs);

/// Flat binary dataset cache. Layout (little-endian):
///   char[8] "TAMCLDS1", u32 version, u32 task_id, u32 count, u32 height,
///   u32 width, u32 channels, u32 images per example, u32 text length,
///   then per example: i32 label, f64 pixels (images x H x W x C), i32 tokens.
void write_dataset(const std::filesystem::path& path, std::span<const RawExample> examples);
std::vector<RawExample> read_dataset(const std::filesystem::path& path);

}  // namespace tamcl
