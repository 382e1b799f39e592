/* tslint:disable */
/* eslint-disable */

/**
 * Apply one proximal operator to a matrix given as rows of numbers
 * (whitespace or comma separated, one row per line).
 */
export function apply_prox(kind: string, param: number, theta: number, matrix: string): string;

/**
 * Simulate a preset dataset (A-D) and estimate its transition matrix with
 * GraphEM and MLEM.
 */
export function estimate_graph(dataset: string, seed: number, horizon: number, kappa: number): string;

/**
 * Scalar random walk observed in noise: true states, observations and the
 * filtered/smoothed means with ±2σ bands.
 */
export function smooth_track(a: number, sigma_q: number, sigma_r: number, steps: number, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly apply_prox: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly estimate_graph: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly smooth_track: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
