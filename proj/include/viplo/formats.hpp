#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "viplo/hoi_head.hpp"
#include "viplo/model.hpp"

namespace viplo {

class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline std::vector<std::string> tokenize(const std::string& line) {
    std::istringstream ss(line);
    std::vector<std::string> out;
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

inline double to_double(const std::string& s, const char* what) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError(std::string("bad number for ") + what + ": '" + s + "'");
    }
}

inline int to_int(const std::string& s, const char* what) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError(std::string("bad integer for ") + what + ": '" + s + "'");
    }
}

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

inline void write_text(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write " + path);
    out << body;
}

}  // namespace detail

// ---------------------------------------------------------------- detections

struct DetectionFile {
    std::string image_id = "image";
    int width = 0, height = 0;
    std::vector<Detection> detections;
};

inline std::string serialize(const DetectionFile& f) {
    std::ostringstream out;
    out << "viplo-detections 1\n";
    out << "image " << f.image_id << "\n";
    out << "size " << f.width << " " << f.height << "\n";
    for (const Detection& d : f.detections)
        out << "det " << detail::fmt(d.box.x1) << " " << detail::fmt(d.box.y1) << " "
            << detail::fmt(d.box.x2) << " " << detail::fmt(d.box.y2) << " "
            << d.class_id << " " << detail::fmt(d.score) << "\n";
    return out.str();
}

inline DetectionFile parse_detections(const std::string& path) {
    const auto lines = detail::read_lines(path);
    if (lines.empty() || lines[0] != "viplo-detections 1")
        throw ParseError(path + ": not a viplo-detections file");
    DetectionFile f;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto t = detail::tokenize(lines[i]);
        if (t.empty()) continue;
        if (t[0] == "image" && t.size() == 2) {
            f.image_id = t[1];
        } else if (t[0] == "size" && t.size() == 3) {
            f.width = detail::to_int(t[1], "width");
            f.height = detail::to_int(t[2], "height");
        } else if (t[0] == "det" && t.size() == 7) {
            Detection d;
            d.box = Box{detail::to_double(t[1], "x1"), detail::to_double(t[2], "y1"),
                        detail::to_double(t[3], "x2"), detail::to_double(t[4], "y2")};
            d.class_id = detail::to_int(t[5], "class");
            d.score = detail::to_double(t[6], "score");
            if (d.score < 0.0 || d.score > 1.0)
                throw ParseError(path + ": detection score out of [0,1]");
            f.detections.push_back(d);
        } else {
            throw ParseError(path + ": bad line: " + lines[i]);
        }
    }
    if (f.width <= 0 || f.height <= 0) throw ParseError(path + ": missing size");
    return f;
}

// --------------------------------------------------------------------- poses

struct PoseFile {
    std::map<int, JointSet> poses;  // detection index -> joints
};

inline std::string serialize(const PoseFile& f) {
    std::ostringstream out;
    out << "viplo-poses 1\n";
    for (const auto& [idx, js] : f.poses) {
        out << "pose " << idx << "\n";
        for (const Keypoint& k : js.joints)
            out << "kp " << detail::fmt(k.x) << " " << detail::fmt(k.y) << " "
                << detail::fmt(k.confidence) << "\n";
    }
    return out.str();
}

inline PoseFile parse_poses(const std::string& path) {
    const auto lines = detail::read_lines(path);
    if (lines.empty() || lines[0] != "viplo-poses 1")
        throw ParseError(path + ": not a viplo-poses file");
    PoseFile f;
    std::optional<int> current;
    int kp_count = 0;
    JointSet js;
    auto flush = [&]() {
        if (current) {
            if (kp_count != kNumJoints)
                throw ParseError(path + ": pose needs exactly 17 keypoints");
            f.poses[*current] = js;
        }
    };
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto t = detail::tokenize(lines[i]);
        if (t.empty()) continue;
        if (t[0] == "pose" && t.size() == 2) {
            flush();
            current = detail::to_int(t[1], "pose index");
            kp_count = 0;
            js = JointSet{};
        } else if (t[0] == "kp" && t.size() == 4) {
            if (!current || kp_count >= kNumJoints)
                throw ParseError(path + ": stray keypoint line");
            js.joints[kp_count++] = Keypoint{detail::to_double(t[1], "kp x"),
                                             detail::to_double(t[2], "kp y"),
                                             detail::to_double(t[3], "kp conf")};
        } else {
            throw ParseError(path + ": bad line: " + lines[i]);
        }
    }
    flush();
    return f;
}

// ------------------------------------------------------------------ triplets

struct HOIRecord {
    std::string image_id;
    HOITriplet t;
};

struct TripletFile {
    bool predictions = true;  // predictions carry a score, ground truth does not
    std::vector<HOIRecord> records;
};

inline std::string serialize(const TripletFile& f) {
    std::ostringstream out;
    out << (f.predictions ? "viplo-predictions 1\n" : "viplo-groundtruth 1\n");
    for (const HOIRecord& r : f.records) {
        out << "hoi " << r.image_id << " " << detail::fmt(r.t.human.x1) << " "
            << detail::fmt(r.t.human.y1) << " " << detail::fmt(r.t.human.x2) << " "
            << detail::fmt(r.t.human.y2) << " " << detail::fmt(r.t.object.x1) << " "
            << detail::fmt(r.t.object.y1) << " " << detail::fmt(r.t.object.x2) << " "
            << detail::fmt(r.t.object.y2) << " " << r.t.object_class << " "
            << r.t.verb;
        if (f.predictions) out << " " << detail::fmt(r.t.score);
        out << "\n";
    }
    return out.str();
}

inline TripletFile parse_triplets(const std::string& path) {
    const auto lines = detail::read_lines(path);
    TripletFile f;
    if (lines.empty()) throw ParseError(path + ": empty triplet file");
    if (lines[0] == "viplo-predictions 1")
        f.predictions = true;
    else if (lines[0] == "viplo-groundtruth 1")
        f.predictions = false;
    else
        throw ParseError(path + ": not a viplo triplet file");
    const std::size_t want = f.predictions ? 13 : 12;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto t = detail::tokenize(lines[i]);
        if (t.empty()) continue;
        if (t[0] != "hoi" || t.size() != want)
            throw ParseError(path + ": bad line: " + lines[i]);
        HOIRecord r;
        r.image_id = t[1];
        r.t.human = Box{detail::to_double(t[2], "hx1"), detail::to_double(t[3], "hy1"),
                        detail::to_double(t[4], "hx2"), detail::to_double(t[5], "hy2")};
        r.t.object = Box{detail::to_double(t[6], "ox1"), detail::to_double(t[7], "oy1"),
                         detail::to_double(t[8], "ox2"), detail::to_double(t[9], "oy2")};
        r.t.object_class = detail::to_int(t[10], "object class");
        r.t.verb = detail::to_int(t[11], "verb");
        if (f.predictions) r.t.score = detail::to_double(t[12], "score");
        f.records.push_back(std::move(r));
    }
    return f;
}

// -------------------------------------------------------------------- images

// Uncompressed raster: "VIMG1\n<width> <height>\n" followed by
// width*height*3 bytes of row-major RGB.
struct Image {
    int width = 0, height = 0;
    std::vector<std::uint8_t> rgb;
};

inline void write_image(const std::string& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write " + path);
    out << "VIMG1\n" << img.width << " " << img.height << "\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()),
              static_cast<std::streamsize>(img.rgb.size()));
}

inline Image read_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    std::string magic, dims;
    if (!std::getline(in, magic) || magic != "VIMG1")
        throw ParseError(path + ": not a VIMG1 raster");
    if (!std::getline(in, dims)) throw ParseError(path + ": truncated header");
    const auto t = detail::tokenize(dims);
    if (t.size() != 2) throw ParseError(path + ": bad raster header");
    Image img;
    img.width = detail::to_int(t[0], "image width");
    img.height = detail::to_int(t[1], "image height");
    if (img.width <= 0 || img.height <= 0) throw ParseError(path + ": bad raster size");
    img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    in.read(reinterpret_cast<char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.rgb.size()))
        throw ParseError(path + ": truncated raster payload");
    return img;
}

// ------------------------------------------------------------------- weights

// Binary, little-endian: magic "VIPLOWT1", u32 version, ten u32 config
// fields, u32 tensor count, then per tensor: u32 name length, name bytes,
// u32 rank, u32 extents, float32 payload.
namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t get_u32(std::istream& in, const std::string& path) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (in.gcount() != 4) throw ParseError(path + ": truncated weight file");
    return v;
}

}  // namespace detail

inline void write_weights(const std::string& path, const ModelParams& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write " + path);
    out.write("VIPLOWT1", 8);
    const ModelConfig& c = params.cfg;
    detail::put_u32(out, 1);
    for (std::uint32_t v : {c.patch_size, c.image_size, c.embed_dim, c.num_heads,
                            c.num_layers, c.mlp_hidden, c.node_dim, c.edge_dim,
                            c.verb_classes, c.steps})
        detail::put_u32(out, v);
    std::uint32_t count = 0;
    ModelParams& mutable_params = const_cast<ModelParams&>(params);
    visit_params(mutable_params, [&](const std::string&, Tensor&) { ++count; });
    detail::put_u32(out, count);
    visit_params(mutable_params, [&](const std::string& name, Tensor& t) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape)
            detail::put_u32(out, static_cast<std::uint32_t>(d));
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * 4));
    });
    if (!out) throw ParseError("write failure on " + path);
}

inline ModelParams read_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::string(magic, 8) != "VIPLOWT1")
        throw ParseError(path + ": not a viplo weight file");
    const std::uint32_t version = detail::get_u32(in, path);
    if (version != 1) throw ParseError(path + ": unsupported weight version");
    ModelConfig c;
    c.patch_size = detail::get_u32(in, path);
    c.image_size = detail::get_u32(in, path);
    c.embed_dim = detail::get_u32(in, path);
    c.num_heads = detail::get_u32(in, path);
    c.num_layers = detail::get_u32(in, path);
    c.mlp_hidden = detail::get_u32(in, path);
    c.node_dim = detail::get_u32(in, path);
    c.edge_dim = detail::get_u32(in, path);
    c.verb_classes = detail::get_u32(in, path);
    c.steps = detail::get_u32(in, path);
    try {
        c.validate();
    } catch (const DimensionError& e) {
        throw ParseError(path + ": bad config block: " + e.what());
    }
    const std::uint32_t count = detail::get_u32(in, path);
    std::map<std::string, Tensor> arrays;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = detail::get_u32(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (in.gcount() != static_cast<std::streamsize>(name_len))
            throw ParseError(path + ": truncated weight file");
        const std::uint32_t rank = detail::get_u32(in, path);
        std::vector<std::size_t> shape;
        for (std::uint32_t d = 0; d < rank; ++d)
            shape.push_back(detail::get_u32(in, path));
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * 4));
        if (in.gcount() != static_cast<std::streamsize>(t.data.size() * 4))
            throw ParseError(path + ": truncated tensor payload for " + name);
        if (arrays.count(name)) throw ParseError(path + ": duplicate tensor " + name);
        arrays.emplace(std::move(name), std::move(t));
    }
    ModelParams m = allocate_model(c);
    visit_params(m, [&](const std::string& name, Tensor& t) {
        auto it = arrays.find(name);
        if (it == arrays.end()) throw ParseError(path + ": missing tensor " + name);
        if (it->second.shape != t.shape)
            throw ParseError(path + ": shape mismatch for " + name);
        t = std::move(it->second);
        arrays.erase(it);
    });
    if (!arrays.empty())
        throw ParseError(path + ": unknown tensor " + arrays.begin()->first);
    return m;
}

}  // namespace viplo
