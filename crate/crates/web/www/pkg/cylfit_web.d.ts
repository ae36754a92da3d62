/* tslint:disable */
/* eslint-disable */

/**
 * Hough accumulator and decomposition of a random synthetic model.
 */
export function hough_demo(segments: number, points: number, seed: bigint): string;

/**
 * Mean and worst axis error of closed-form recovery on the L-profile
 * fixture as Gaussian noise is added to the normals.
 */
export function noise_curve(sigmas: Float64Array, seeds: bigint, points: number): string;

/**
 * Signed field of a clicked polygon and the loops marching squares finds
 * in it. `coords` is `x0, y0, x1, y1, ...` in `[-1.2, 1.2]`.
 */
export function sketch_field(coords: Float64Array, resolution: number, from_samples: boolean, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly hough_demo: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly noise_curve: (a: number, b: number, c: bigint, d: number) => [number, number, number, number];
    readonly sketch_field: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
