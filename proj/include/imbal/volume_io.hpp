#pragma once

#include <filesystem>
#include <optional>
#include <variant>

#include "imbal/volume.hpp"

namespace imbal {

/// On-disk element type. Labels use U8 or I16, probabilities F32.
enum class ElementType { U8, I16, F32 };

/// Two supported layouts:
///  - MetaImage (`.mhd` with detached payload, or `.mha` with ElementDataFile = LOCAL),
///    uncompressed, 3D, little-endian;
///  - a `.json` header next to a `.raw` little-endian payload, x fastest, then y, z,
///    channel outermost.
enum class VolumeFormat { MetaImage, JsonRaw };

enum class VolumeKind { Label, Prob };

/// Chosen from the extension: `.json`/`.raw` -> JsonRaw, `.mhd`/`.mha` -> MetaImage.
VolumeFormat format_from_path(const std::filesystem::path& path);

LabelVolume load_label_volume(const std::filesystem::path& path);
ProbVolume load_prob_volume(const std::filesystem::path& path);
std::variant<LabelVolume, ProbVolume> load_volume(const std::filesystem::path& path, VolumeKind kind);

/// Reads only the header; useful to decide between label and probability payloads.
struct VolumeHeader {
  Dims dims;
  Spacing spacing;
  ElementType type = ElementType::U8;
  int channels = 1;
  std::vector<std::string> class_names;
};
VolumeHeader read_volume_header(const std::filesystem::path& path);

/// Element type defaults to U8 when every label fits, I16 otherwise.
void save_volume(const std::filesystem::path& path, const LabelVolume& volume,
                 std::optional<ElementType> type = std::nullopt);
void save_volume(const std::filesystem::path& path, const ProbVolume& volume);

}  // namespace imbal
