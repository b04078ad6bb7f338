#include "handsoff/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "handsoff/errors.hpp"

namespace fs = std::filesystem;

namespace handsoff {

std::vector<FrameRecord> list_frames(const std::string& directory) {
    if (!fs::is_directory(directory)) {
        throw DataError(detail::strformat("not a directory: %s", directory.c_str()));
    }
    std::vector<FrameRecord> frames;
    for (const fs::directory_entry& entry : fs::directory_iterator(directory)) {
        if (!entry.is_regular_file() || !is_image_path(entry.path().string())) {
            continue;
        }
        FrameRecord frame;
        frame.image_id = entry.path().stem().string();
        frame.path = entry.path().string();
        auto [w, h] = read_image_dims(frame.path);
        frame.width = w;
        frame.height = h;
        frames.push_back(std::move(frame));
    }
    std::sort(frames.begin(), frames.end(),
              [](const FrameRecord& a, const FrameRecord& b) { return a.image_id < b.image_id; });
    for (size_t i = 0; i + 1 < frames.size(); ++i) {
        if (frames[i].image_id == frames[i + 1].image_id) {
            throw DataError(detail::strformat("duplicate frame id '%s' (%s and %s)",
                                              frames[i].image_id.c_str(),
                                              frames[i].path.c_str(),
                                              frames[i + 1].path.c_str()));
        }
    }
    for (size_t i = 0; i < frames.size(); ++i) {
        frames[i].frame_index = static_cast<int>(i);
    }
    return frames;
}

namespace {

// Coordinates may poke slightly past [0,1] from annotation-tool rounding;
// real overshoot means the label is wrong for its image.
float check_unit_range(float value, const char* name, const std::string& file, int line,
                       std::vector<std::string>* warnings) {
    const float overshoot = std::max(0.0f - value, value - 1.0f);
    if (overshoot <= 0.0f) {
        return value;
    }
    if (overshoot > 0.05f) {
        throw DataError(detail::strformat("%s:%d: %s=%g lies outside [0,1] by %g", file.c_str(),
                                          line, name, value, overshoot));
    }
    if (overshoot > 1e-3f && warnings) {
        warnings->push_back(detail::strformat("%s:%d: clamped %s=%g into [0,1]", file.c_str(),
                                              line, name, value));
    }
    return std::clamp(value, 0.0f, 1.0f);
}

} // namespace

std::map<std::string, std::vector<GroundTruthBox>> load_ground_truth(
    const std::string& directory, std::vector<std::string>* warnings) {
    if (!fs::is_directory(directory)) {
        throw DataError(detail::strformat("not a directory: %s", directory.c_str()));
    }
    std::map<std::string, std::vector<GroundTruthBox>> result;
    std::vector<fs::path> files;
    for (const fs::directory_entry& entry : fs::directory_iterator(directory)) {
        if (entry.is_regular_file() && entry.path().extension() == ".txt") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());

    for (const fs::path& path : files) {
        const std::string image_id = path.stem().string();
        const std::string file = path.string();
        std::ifstream in(path);
        if (!in) {
            throw DataError(detail::strformat("cannot open %s", file.c_str()));
        }
        std::vector<GroundTruthBox>& boxes = result[image_id]; // empty file -> empty list
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) {
                continue;
            }
            std::istringstream fields(line);
            GroundTruthBox box;
            box.image_id = image_id;
            std::string extra;
            if (!(fields >> box.class_id >> box.cx >> box.cy >> box.w >> box.h) ||
                fields >> extra) {
                throw DataError(detail::strformat(
                    "%s:%d: expected 'class cx cy w h', got '%s'", file.c_str(), line_no,
                    line.c_str()));
            }
            box.cx = check_unit_range(box.cx, "cx", file, line_no, warnings);
            box.cy = check_unit_range(box.cy, "cy", file, line_no, warnings);
            box.w = check_unit_range(box.w, "w", file, line_no, warnings);
            box.h = check_unit_range(box.h, "h", file, line_no, warnings);
            if (box.w <= 0.0f || box.h <= 0.0f) {
                throw DataError(detail::strformat("%s:%d: box has zero area", file.c_str(),
                                                  line_no));
            }
            // Keep the whole box inside the unit square.
            const float x0 = std::clamp(box.cx - 0.5f * box.w, 0.0f, 1.0f);
            const float x1 = std::clamp(box.cx + 0.5f * box.w, 0.0f, 1.0f);
            const float y0 = std::clamp(box.cy - 0.5f * box.h, 0.0f, 1.0f);
            const float y1 = std::clamp(box.cy + 0.5f * box.h, 0.0f, 1.0f);
            if (x1 - x0 <= 0.0f || y1 - y0 <= 0.0f) {
                throw DataError(detail::strformat("%s:%d: box lies entirely outside the image",
                                                  file.c_str(), line_no));
            }
            box.cx = 0.5f * (x0 + x1);
            box.cy = 0.5f * (y0 + y1);
            box.w = x1 - x0;
            box.h = y1 - y0;
            boxes.push_back(std::move(box));
        }
    }
    return result;
}

std::string detection_line(const Detection& det) {
    const std::string id = nlohmann::json(det.image_id).dump(); // quoted and escaped
    return detail::strformat(
        "{\"image_id\":%s,\"class_id\":%d,\"cx\":%.4f,\"cy\":%.4f,\"w\":%.4f,\"h\":%.4f,"
        "\"objectness\":%.6f,\"class_score\":%.6f,\"confidence\":%.6f}",
        id.c_str(), det.class_id, det.cx, det.cy, det.w, det.h, det.objectness, det.class_score,
        det.confidence);
}

void write_detections(const std::vector<Detection>& dets, std::ostream& sink) {
    for (const Detection& det : dets) {
        sink << detection_line(det) << '\n';
    }
    if (!sink) {
        throw DataError("failed to write detections");
    }
}

std::vector<Detection> read_detections(std::istream& source) {
    std::vector<Detection> dets;
    std::string line;
    int line_no = 0;
    while (std::getline(source, line)) {
        ++line_no;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(detail::strformat("detections line %d: %s", line_no, e.what()));
        }
        try {
            Detection det;
            det.image_id = obj.at("image_id").get<std::string>();
            det.class_id = obj.at("class_id").get<int>();
            det.cx = obj.at("cx").get<float>();
            det.cy = obj.at("cy").get<float>();
            det.w = obj.at("w").get<float>();
            det.h = obj.at("h").get<float>();
            det.objectness = obj.at("objectness").get<float>();
            det.class_score = obj.at("class_score").get<float>();
            det.confidence = obj.at("confidence").get<float>();
            dets.push_back(std::move(det));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(detail::strformat("detections line %d: %s", line_no, e.what()));
        }
    }
    return dets;
}

std::vector<Detection> read_detections_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError(detail::strformat("cannot open %s", path.c_str()));
    }
    return read_detections(in);
}

namespace {

struct Rgb {
    uint8_t r, g, b;
};

constexpr Rgb kDetectionColor{40, 200, 40};
constexpr Rgb kGroundTruthColor{220, 50, 50};

void put_pixel(RasterImage& image, int x, int y, Rgb color) {
    if (x < 0 || y < 0 || x >= image.width || y >= image.height) {
        return;
    }
    uint8_t* p = image.pixel(x, y);
    p[0] = color.r;
    p[1] = color.g;
    p[2] = color.b;
}

void draw_rect(RasterImage& image, const Box& box, Rgb color) {
    const int x0 = static_cast<int>(std::lround(box.x_min));
    const int y0 = static_cast<int>(std::lround(box.y_min));
    const int x1 = static_cast<int>(std::lround(box.x_max)) - 1;
    const int y1 = static_cast<int>(std::lround(box.y_max)) - 1;
    for (int t = 0; t < 2; ++t) {
        for (int x = x0; x <= x1; ++x) {
            put_pixel(image, x, y0 + t, color);
            put_pixel(image, x, y1 - t, color);
        }
        for (int y = y0; y <= y1; ++y) {
            put_pixel(image, x0 + t, y, color);
            put_pixel(image, x1 - t, y, color);
        }
    }
}

// 5x7 glyphs for confidence captions; bit 4 is the leftmost column.
constexpr uint8_t kDigitRows[10][7] = {
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}, // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}, // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}, // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}, // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}, // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}, // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}, // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}, // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}, // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}, // 9
};
constexpr uint8_t kDotRows[7] = {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C};

void draw_text(RasterImage& image, int x, int y, const std::string& text, Rgb color) {
    for (char ch : text) {
        const uint8_t* rows = nullptr;
        if (ch >= '0' && ch <= '9') {
            rows = kDigitRows[ch - '0'];
        } else if (ch == '.') {
            rows = kDotRows;
        }
        if (rows) {
            for (int ry = 0; ry < 7; ++ry) {
                for (int rx = 0; rx < 5; ++rx) {
                    if (rows[ry] & (1 << (4 - rx))) {
                        put_pixel(image, x + rx, y + ry, color);
                    }
                }
            }
        }
        x += 6; // glyph plus one column of spacing
    }
}

} // namespace

RasterImage render_overlay(const RasterImage& image, const std::vector<Detection>& dets,
                           const std::vector<LabeledBox>* gts) {
    RasterImage out = image;
    if (gts) {
        for (const LabeledBox& gt : *gts) {
            draw_rect(out, gt.box, kGroundTruthColor);
        }
    }
    for (const Detection& det : dets) {
        const Box box = corner_box(det);
        draw_rect(out, box, kDetectionColor);
        const std::string caption = detail::strformat("%.2f", det.confidence);
        int tx = static_cast<int>(std::lround(box.x_min));
        int ty = static_cast<int>(std::lround(box.y_min)) - 9;
        if (ty < 0) {
            ty = static_cast<int>(std::lround(box.y_min)) + 3;
        }
        draw_text(out, tx, ty, caption, kDetectionColor);
    }
    return out;
}

} // namespace handsoff
