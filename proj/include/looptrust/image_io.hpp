#pragma once

#include <png.h>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "looptrust/errors.hpp"
#include "looptrust/image.hpp"

namespace looptrust {

/// Shortest round-trippable decimal form ("%.17g").
inline std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out << content;
    if (!out) throw Error("failed writing '" + path.string() + "'");
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

/// Splits comma-separated numeric text into rows; trailing blank lines are ignored.
template <typename T>
std::vector<std::vector<T>> parse_csv_numbers(std::string_view text) {
    std::vector<std::vector<T>> rows;
    std::size_t row_no = 0;
    std::size_t pos = 0;
    std::vector<std::string_view> lines;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        lines.push_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();

    for (std::string_view line : lines) {
        ++row_no;
        line = trim(line);
        if (line.empty()) throw ParseError("empty row", row_no);
        std::vector<T> row;
        std::size_t col = 0;
        std::size_t start = 0;
        while (true) {
            ++col;
            std::size_t comma = line.find(',', start);
            std::string_view cell = trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                                            : comma - start));
            if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
            T value{};
            auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
            if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size())
                throw ParseError("non-numeric cell '" + std::string(cell) + "'", row_no, col);
            if constexpr (std::is_floating_point_v<T>) {
                if (!std::isfinite(value)) throw ParseError("non-finite cell", row_no, col);
            }
            row.push_back(value);
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw ParseError("ragged row: expected " + std::to_string(rows.front().size()) + " cells, got " +
                                 std::to_string(row.size()),
                             row_no);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError("empty file");
    return rows;
}

inline bool has_extension(const std::filesystem::path& path, std::string_view ext) {
    std::string e = path.extension().string();
    for (char& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return e == ext;
}

[[noreturn]] inline void png_throw(png_structp, png_const_charp msg) { throw ParseError(std::string("png: ") + msg); }
inline void png_warn(png_structp, png_const_charp) {}

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};

}  // namespace detail

// ---------------------------------------------------------------------------------------
// CSV

inline GrayImage parse_image_csv(std::string_view text) {
    auto rows = detail::parse_csv_numbers<double>(text);
    const int height = static_cast<int>(rows.size());
    const int width = static_cast<int>(rows.front().size());
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(width) * height);
    for (auto& r : rows) data.insert(data.end(), r.begin(), r.end());
    return GrayImage(width, height, std::move(data));
}

inline std::string image_to_csv(const GrayImage& img) {
    std::string out;
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            if (x) out += ',';
            out += format_real(img(x, y));
        }
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------------------
// PNG (single-channel grayscale; 16-bit on write)

inline std::vector<std::uint16_t> read_png_gray(const std::filesystem::path& path, int& width, int& height) {
    std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw Error("cannot open '" + path.string() + "' for reading");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_throw, detail::png_warn);
    if (!png) throw Error("png: out of memory");
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp& p;
        png_infop& i;
        ~Guard() { png_destroy_read_struct(&p, &i, nullptr); }
    } guard{png, info};

    png_init_io(png, fp.get());
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY) throw ParseError("png: expected single-channel grayscale");
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (depth == 16) png_set_swap(png);  // host little-endian words
    png_read_update_info(png, info);

    width = static_cast<int>(w);
    height = static_cast<int>(h);
    std::vector<std::uint16_t> out(static_cast<std::size_t>(w) * h);
    if (depth == 16) {
        std::vector<png_bytep> rows(h);
        for (png_uint_32 y = 0; y < h; ++y) rows[y] = reinterpret_cast<png_bytep>(out.data() + y * w);
        png_read_image(png, rows.data());
    } else {
        std::vector<png_byte> buf(static_cast<std::size_t>(w) * h);
        std::vector<png_bytep> rows(h);
        for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + y * w;
        png_read_image(png, rows.data());
        for (std::size_t i = 0; i < buf.size(); ++i) out[i] = buf[i];
    }
    png_read_end(png, nullptr);
    return out;
}

inline void write_png_gray16(const std::filesystem::path& path, int width, int height,
                             const std::vector<std::uint16_t>& values) {
    std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw Error("cannot open '" + path.string() + "' for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_throw, detail::png_warn);
    if (!png) throw Error("png: out of memory");
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp& p;
        png_infop& i;
        ~Guard() { png_destroy_write_struct(&p, &i); }
    } guard{png, info};

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 16,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_set_swap(png);
    std::vector<std::uint16_t> row(static_cast<std::size_t>(width));
    for (int y = 0; y < height; ++y) {
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(y) * width, width, row.begin());
        png_write_row(png, reinterpret_cast<png_const_bytep>(row.data()));
    }
    png_write_end(png, nullptr);
}

inline GrayImage load_png_image(const std::filesystem::path& path) {
    int w = 0, h = 0;
    auto raw = read_png_gray(path, w, h);
    return GrayImage(w, h, std::vector<double>(raw.begin(), raw.end()));
}

/// Intensities must be integers in [0, 65535].
inline void save_png_image(const GrayImage& img, const std::filesystem::path& path) {
    std::vector<std::uint16_t> values(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = img[i];
        if (v < 0.0 || v > 65535.0 || v != std::floor(v))
            throw InvalidArgument("16-bit PNG needs integer intensities in [0, 65535]; pixel " + std::to_string(i) +
                                  " is " + format_real(v));
        values[i] = static_cast<std::uint16_t>(v);
    }
    write_png_gray16(path, img.width(), img.height(), values);
}

// ---------------------------------------------------------------------------------------
// Format dispatch on extension

inline GrayImage load_image(const std::filesystem::path& path) {
    if (detail::has_extension(path, ".png")) return load_png_image(path);
    return parse_image_csv(detail::read_file(path));
}

inline void save_image(const GrayImage& img, const std::filesystem::path& path) {
    if (detail::has_extension(path, ".png"))
        save_png_image(img, path);
    else
        detail::write_file(path, image_to_csv(img));
}

// ---------------------------------------------------------------------------------------
// Labeling: CSV of integer labels (-1 = held out) plus a JSON sidecar with roles and edges

inline std::filesystem::path labeling_sidecar(const std::filesystem::path& csv_path) {
    auto p = csv_path;
    p.replace_extension(".json");
    return p;
}

inline void save_labeling(const PartitionLabeling& lab, const std::filesystem::path& csv_path) {
    std::string csv;
    for (int y = 0; y < lab.height; ++y) {
        for (int x = 0; x < lab.width; ++x) {
            if (x) csv += ',';
            const std::uint32_t l = lab.label[static_cast<std::size_t>(y) * lab.width + x];
            csv += l == PartitionLabeling::kUnlabeled ? std::string("-1") : std::to_string(l);
        }
        csv += '\n';
    }
    detail::write_file(csv_path, csv);

    nlohmann::json j;
    j["width"] = lab.width;
    j["height"] = lab.height;
    nlohmann::json roles = nlohmann::json::object();
    for (const auto& [l, r] : lab.roles) roles[std::to_string(l)] = to_string(r);
    j["roles"] = roles;
    nlohmann::json edges = nlohmann::json::array();
    for (std::size_t i = 0; i < lab.size(); ++i)
        if (lab.is_edge(i))
            edges.push_back({static_cast<int>(i % lab.width), static_cast<int>(i / lab.width)});
    j["edge_pixels"] = edges;
    detail::write_file(labeling_sidecar(csv_path), j.dump(2) + "\n");
}

inline PartitionLabeling load_labeling(const std::filesystem::path& csv_path) {
    auto rows = detail::parse_csv_numbers<long long>(detail::read_file(csv_path));
    PartitionLabeling lab;
    lab.height = static_cast<int>(rows.size());
    lab.width = static_cast<int>(rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            const long long v = rows[r][c];
            if (v < -1 || v >= static_cast<long long>(PartitionLabeling::kUnlabeled))
                throw ParseError("label out of range", r + 1, c + 1);
            lab.label.push_back(v < 0 ? PartitionLabeling::kUnlabeled : static_cast<std::uint32_t>(v));
        }
    }

    const auto sidecar = labeling_sidecar(csv_path);
    if (std::filesystem::exists(sidecar)) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(detail::read_file(sidecar));
            for (const auto& [key, value] : j.at("roles").items())
                lab.roles[static_cast<std::uint32_t>(std::stoul(key))] = role_from_string(value.get<std::string>());
            if (j.contains("edge_pixels")) {
                lab.edge.assign(lab.label.size(), 0);
                for (const auto& e : j["edge_pixels"]) {
                    const int x = e.at(0).get<int>(), y = e.at(1).get<int>();
                    if (x < 0 || y < 0 || x >= lab.width || y >= lab.height)
                        throw ParseError("edge pixel outside the labeling");
                    lab.edge[static_cast<std::size_t>(y) * lab.width + x] = 1;
                }
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(sidecar.string() + ": " + e.what());
        }
    } else {
        for (std::uint32_t l : lab.label)
            if (l != PartitionLabeling::kUnlabeled) lab.roles.emplace(l, l == 0 ? Role::background() : Role::other());
    }
    return lab;
}

}  // namespace looptrust
