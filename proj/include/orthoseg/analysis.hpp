#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthoseg/raster.hpp"
#include "orthoseg/region.hpp"

namespace orthoseg {

struct ClassCoverage {
    std::uint16_t class_index = 0;
    std::string name;
    std::size_t region_count = 0; // regions with at least one visible pixel
    std::uint64_t area_px = 0;
    double area_mm2 = 0;
    double coverage_percent = 0;
};

struct CoverageReport {
    PixelRect area;
    double pixel_size_mm = 1.0;
    std::vector<ClassCoverage> classes; // catalog classes 1..K-1
};

/// Rasterises the regions over `area` (later regions win overlaps) and totals each class.
CoverageReport coverage(std::span<const Region> regions, const ClassCatalog& catalog, const PixelRect& area,
                        double pixel_size_mm);

enum class ChangeStatus { same, grown, shrunk, appeared, gone, reclassified };
std::string to_string(ChangeStatus s);

struct ChangeRecord {
    ChangeStatus status = ChangeStatus::same;
    std::optional<std::int64_t> region_a, region_b;
    std::optional<std::uint16_t> class_a, class_b;
    double iou = 0;
    std::optional<double> area_ratio; // area B / area A in pixels
};

struct ChangeParams {
    double iou_threshold = 0.25;
    double grow_threshold = 0.05;
};

/// Matches regions of two co-registered surveys. Same-class pairs with raster IoU at least
/// the threshold are matched greedily by decreasing IoU; matched pairs are grown when
/// B/A > 1 + g, shrunk when B/A < 1 / (1 + g), otherwise same. Leftover cross-class pairs
/// above the threshold are reported as reclassified; remaining regions are gone or new.
std::vector<ChangeRecord> detect_changes(std::span<const Region> a, std::span<const Region> b, double pixel_size_a_mm,
                                         double pixel_size_b_mm, const ChangeParams& params = {});

inline constexpr const char* coverage_csv_header = "class_index,class_name,region_count,area_px,area_mm2,coverage_percent";
inline constexpr const char* changes_csv_header = "status,region_a,region_b,class_a,class_b,iou,area_ratio";

std::string coverage_csv(const CoverageReport& report);
std::string changes_csv(std::span<const ChangeRecord> records);
void write_csv(const std::string& content, const std::filesystem::path& path);

nlohmann::json to_json(const CoverageReport& report);
nlohmann::json to_json(const ChangeRecord& record);

} // namespace orthoseg
