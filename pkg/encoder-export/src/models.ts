/** Embedding model plugins. The manifest names the model explicitly:
 *
 *   seeded-projection:<seed>   deterministic grayscale random projection
 *                              (hermetic stand-in, no weights needed)
 *   tfjs:<path>                TensorFlow.js graph model directory holding a
 *                              CLIP-style image tower (model.json + weights)
 *
 * Every model maps an input_side x input_side RGB image to a float32
 * vector of the configured width. */

import { Image, grayscale, resizeBilinear } from "./image";
import { Rng } from "./rng";

export interface EmbeddingModel {
  readonly id: string;
  readonly width: number;
  readonly inputSide: number;
  encode(image: Image): Promise<Float32Array>;
}

class SeededProjectionModel implements EmbeddingModel {
  readonly id: string;
  readonly width: number;
  readonly inputSide: number;
  private projection: Float64Array;

  constructor(seed: number, width: number, inputSide: number) {
    this.id = `seeded-projection:${seed}`;
    this.width = width;
    this.inputSide = inputSide;
    const flat = inputSide * inputSide;
    const rng = new Rng(seed);
    this.projection = new Float64Array(flat * width);
    for (let i = 0; i < this.projection.length; i++) {
      this.projection[i] = rng.normal() / inputSide;
    }
  }

  async encode(image: Image): Promise<Float32Array> {
    const resized = resizeBilinear(image, this.inputSide, this.inputSide);
    const gray = grayscale(resized);
    const out = new Float32Array(this.width);
    for (let j = 0; j < this.width; j++) {
      let acc = 0;
      for (let i = 0; i < gray.length; i++) {
        acc += gray[i] * this.projection[i * this.width + j];
      }
      out[j] = Math.tanh(acc);
    }
    return out;
  }
}

class TfjsModel implements EmbeddingModel {
  readonly id: string;
  readonly width: number;
  readonly inputSide: number;
  private model: any;
  private tf: any;

  constructor(id: string, model: any, tf: any, width: number, inputSide: number) {
    this.id = id;
    this.model = model;
    this.tf = tf;
    this.width = width;
    this.inputSide = inputSide;
  }

  static async load(path: string, width: number, inputSide: number): Promise<TfjsModel> {
    let tf: any;
    try {
      tf = require("@tensorflow/tfjs");
    } catch (err) {
      throw new Error(`model tfjs:${path}: @tensorflow/tfjs is not installed (${err})`);
    }
    let model: any;
    try {
      model = await tf.loadGraphModel(`file://${path}/model.json`);
    } catch (err) {
      throw new Error(`model tfjs:${path}: failed to load graph model (${err})`);
    }
    return new TfjsModel(`tfjs:${path}`, model, tf, width, inputSide);
  }

  async encode(image: Image): Promise<Float32Array> {
    const resized = resizeBilinear(image, this.inputSide, this.inputSide);
    const input = this.tf.tensor4d(Array.from(resized.data), [1, this.inputSide, this.inputSide, 3]);
    const output = this.model.predict(input);
    const values = await output.data();
    input.dispose();
    output.dispose();
    if (values.length !== this.width) {
      throw new Error(
        `model ${this.id} produced width ${values.length}, manifest expects ${this.width}`
      );
    }
    return Float32Array.from(values);
  }
}

export async function loadModel(id: string, width: number, inputSide: number): Promise<EmbeddingModel> {
  if (id.startsWith("seeded-projection:")) {
    const seed = Number(id.split(":")[1]);
    if (!Number.isInteger(seed)) throw new Error(`bad seed in model id ${id}`);
    return new SeededProjectionModel(seed, width, inputSide);
  }
  if (id.startsWith("tfjs:")) {
    return TfjsModel.load(id.slice("tfjs:".length), width, inputSide);
  }
  throw new Error(`unknown embedding model ${id} (expected seeded-projection:<seed> or tfjs:<path>)`);
}
