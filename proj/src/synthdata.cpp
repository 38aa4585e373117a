#include "milfcn/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "milfcn/errors.hpp"
#include "milfcn/netpbm.hpp"

namespace milfcn {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) {
        throw std::invalid_argument(msg);
    }
}

std::string pad4(int id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", id);
    return buf;
}

// shape classes: 1 disk, 2 square, 3 triangle, 4 cross
bool inside_shape(int cls, double dx, double dy, double e) {
    switch (cls) {
        case 1:
            return dx * dx + dy * dy <= e * e;
        case 2:
            return std::abs(dx) <= e && std::abs(dy) <= e;
        case 3:  // upward isoceles triangle, apex at dy = -e
            return dy >= -e && dy <= e && std::abs(dx) <= (dy + e) / 2.0;
        case 4: {
            const double arm = e;
            const double thick = e / 3.0;
            return (std::abs(dx) <= arm && std::abs(dy) <= thick) ||
                   (std::abs(dx) <= thick && std::abs(dy) <= arm);
        }
        default:
            throw std::invalid_argument("unknown shape class " + std::to_string(cls));
    }
}

}  // namespace

void DatasetSpec::validate() const {
    require(train_images >= 0 && val_images >= 0, "spec: image counts must be non-negative");
    require(train_images <= 9999 && val_images <= 9999, "spec: at most 9999 images per split");
    require(height > 0 && width > 0 && height % 4 == 0 && width % 4 == 0,
            "spec: image dims must be positive multiples of the downsample factor 4");
    require(num_fg_classes >= 1 && num_fg_classes <= 4,
            "spec: between 1 and 4 foreground shape classes are supported");
    require(min_shapes >= 0 && max_shapes >= min_shapes, "spec: invalid shapes-per-image range");
    require(max_shapes <= num_fg_classes, "spec: shapes per image cannot exceed the number of classes (one "
                                          "instance per present class)");
    require(min_scale > 0.0 && max_scale >= min_scale && max_scale <= 1.0, "spec: invalid shape scale range");
    require(noise >= 0.0 && noise <= 1.0, "spec: noise amplitude must lie in [0,1]");

    const int side = std::min(height, width);
    require(min_scale * side >= 2.0, "spec: image too small for the minimum shape scale (" +
                                         std::to_string(min_scale) + " of side " + std::to_string(side) + ")");
    require(max_scale * side <= side - 1.0, "spec: maximum shape scale does not fit inside the image");
}

Sample generate_sample(const DatasetSpec& spec, Rng& rng) {
    const int h = spec.height;
    const int w = spec.width;
    const int side = std::min(h, w);

    for (int attempt = 0; attempt < 100; ++attempt) {
        Sample sample;
        sample.image = Tensor::zeros({3, h, w});
        sample.mask = Mask(h, w);

        double* img = sample.image.data();
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        for (std::size_t i = 0; i < 3 * plane; ++i) {
            img[i] = 0.5 + spec.noise * (rng.uniform() - 0.5);
        }

        const int count = rng.uniform_int(spec.min_shapes, spec.max_shapes);
        std::vector<int> classes;
        for (int c = 1; c <= spec.num_fg_classes; ++c) {
            classes.push_back(c);
        }
        rng.shuffle(classes);
        classes.resize(static_cast<std::size_t>(count));

        // draw order is occlusion order: later shapes overwrite earlier ones
        for (int cls : classes) {
            const double scale = rng.uniform(spec.min_scale, spec.max_scale);
            const double e = scale * side / 2.0;
            const double cx = rng.uniform(e, w - 1 - e);
            const double cy = rng.uniform(e, h - 1 - e);
            const double color[3] = {rng.uniform(), rng.uniform(), rng.uniform()};

            const int y_lo = std::max(0, static_cast<int>(std::ceil(cy - e)));
            const int y_hi = std::min(h - 1, static_cast<int>(std::floor(cy + e)));
            const int x_lo = std::max(0, static_cast<int>(std::ceil(cx - e)));
            const int x_hi = std::min(w - 1, static_cast<int>(std::floor(cx + e)));
            for (int y = y_lo; y <= y_hi; ++y) {
                for (int x = x_lo; x <= x_hi; ++x) {
                    if (inside_shape(cls, x - cx, y - cy, e)) {
                        const std::size_t p = static_cast<std::size_t>(y) * w + x;
                        sample.mask.ids[p] = static_cast<std::uint8_t>(cls);
                        img[p] = color[0];
                        img[plane + p] = color[1];
                        img[2 * plane + p] = color[2];
                    }
                }
            }
        }

        // every drawn class must stay visible after occlusion
        std::vector<int> visible(static_cast<std::size_t>(spec.num_fg_classes) + 1, 0);
        for (std::uint8_t id : sample.mask.ids) {
            visible[id] = 1;
        }
        bool ok = true;
        for (int cls : classes) {
            ok = ok && visible[cls] == 1;
        }
        if (!ok) {
            continue;
        }

        std::vector<int> present;
        for (int c = 1; c <= spec.num_fg_classes; ++c) {
            if (visible[c]) {
                present.push_back(c);
            }
        }
        sample.bag = LabelBag::with_background(present);
        return sample;
    }
    throw std::runtime_error("generate_sample: failed to place visible shapes after 100 attempts");
}

namespace {

void write_split(const DatasetSpec& spec, Rng& rng, const std::filesystem::path& root, int count) {
    std::filesystem::create_directories(root / "img");
    std::filesystem::create_directories(root / "mask");

    std::string manifest;
    for (int i = 1; i <= count; ++i) {
        const Sample sample = generate_sample(spec, rng);
        const std::string id = pad4(i);
        const std::string img_rel = "img/" + id + ".ppm";
        const std::string mask_rel = "mask/" + id + ".pgm";
        write_file(root / img_rel, encode_ppm(sample.image));
        write_file(root / mask_rel, encode_pgm(sample.mask));

        manifest += img_rel;
        manifest += '\t';
        manifest += mask_rel;
        manifest += '\t';
        const auto& labels = sample.bag.labels();
        for (std::size_t k = 0; k < labels.size(); ++k) {
            if (k) {
                manifest += ',';
            }
            manifest += std::to_string(labels[k]);
        }
        manifest += '\n';
    }
    write_file(root / "manifest.tsv", std::vector<std::uint8_t>(manifest.begin(), manifest.end()));
}

}  // namespace

void generate_dataset(const DatasetSpec& spec, const std::filesystem::path& root) {
    spec.validate();
    Rng rng(spec.seed);
    write_split(spec, rng, root / "train", spec.train_images);
    write_split(spec, rng, root / "val", spec.val_images);
}

DatasetSpec parse_dataset_spec(const std::string& text) {
    DatasetSpec spec;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty()) {
            continue;
        }
        const auto eq = t.find('=');
        require(eq != std::string::npos, "spec line " + std::to_string(line_no) + ": expected key=value");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        try {
            if (key == "train_images") {
                spec.train_images = std::stoi(value);
            } else if (key == "val_images") {
                spec.val_images = std::stoi(value);
            } else if (key == "height") {
                spec.height = std::stoi(value);
            } else if (key == "width") {
                spec.width = std::stoi(value);
            } else if (key == "num_fg_classes") {
                spec.num_fg_classes = std::stoi(value);
            } else if (key == "min_shapes") {
                spec.min_shapes = std::stoi(value);
            } else if (key == "max_shapes") {
                spec.max_shapes = std::stoi(value);
            } else if (key == "min_scale") {
                spec.min_scale = std::stod(value);
            } else if (key == "max_scale") {
                spec.max_scale = std::stod(value);
            } else if (key == "noise") {
                spec.noise = std::stod(value);
            } else if (key == "seed") {
                spec.seed = std::stoull(value);
            } else {
                require(false, "spec line " + std::to_string(line_no) + ": unknown key \"" + key + "\"");
            }
        } catch (const std::invalid_argument&) {
            throw;
        } catch (const std::exception&) {
            require(false, "spec line " + std::to_string(line_no) + ": bad value \"" + value + "\"");
        }
    }
    spec.validate();
    return spec;
}

DatasetSpec load_dataset_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open dataset spec " + path.string());
    }
    std::ostringstream text;
    text << in.rdbuf();
    return parse_dataset_spec(text.str());
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& manifest_path, int num_fg_classes) {
    std::ifstream in(manifest_path);
    if (!in) {
        throw IoError("cannot open manifest " + manifest_path.string());
    }
    std::vector<ManifestEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto where = manifest_path.string() + " line " + std::to_string(line_no);

        const auto tab1 = line.find('\t');
        const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
        if (tab2 == std::string::npos) {
            throw IoError(where + ": expected three tab-separated fields");
        }
        ManifestEntry entry;
        entry.image_path = line.substr(0, tab1);
        entry.mask_path = line.substr(tab1 + 1, tab2 - tab1 - 1);

        std::vector<int> labels;
        std::istringstream ls(line.substr(tab2 + 1));
        std::string tok;
        while (std::getline(ls, tok, ',')) {
            int label = 0;
            try {
                label = std::stoi(tok);
            } catch (const std::exception&) {
                throw IoError(where + ": bad label \"" + tok + "\"");
            }
            if (label < 0 || label > num_fg_classes) {
                throw IoError(where + ": label " + std::to_string(label) + " out of range for " +
                              std::to_string(num_fg_classes) + " foreground classes");
            }
            labels.push_back(label);
        }
        if (labels.empty() || std::find(labels.begin(), labels.end(), 0) == labels.end()) {
            throw IoError(where + ": label bag must contain the background label 0");
        }
        entry.bag = LabelBag(labels);
        entries.push_back(std::move(entry));
    }
    return entries;
}

LoadedDataset load_split(const std::filesystem::path& split_root, int num_fg_classes) {
    LoadedDataset ds;
    for (const ManifestEntry& entry : load_manifest(split_root / "manifest.tsv", num_fg_classes)) {
        Sample sample;
        sample.image = decode_ppm(read_file(split_root / entry.image_path));
        sample.mask = decode_pgm(read_file(split_root / entry.mask_path));
        if (sample.mask.h != sample.image.shape()[1] || sample.mask.w != sample.image.shape()[2]) {
            throw IoError(split_root.string() + ": image and mask dims differ for " + entry.image_path);
        }
        sample.bag = entry.bag;
        ds.samples.push_back(std::move(sample));
    }
    return ds;
}

}  // namespace milfcn
