/* tslint:disable */
/* eslint-disable */

export function captionMetrics(text: string): string;

export function fidExplorer(mu_a: Float64Array, sd_a: Float64Array, mu_b: Float64Array, sd_b: Float64Array, samples: number, seed: number): string;

/**
 * JSON `{width, height, offsets}` of the merged layout.
 */
export function mergeLayout(widths: Uint32Array, heights: Uint32Array, colors: Uint32Array): string;

/**
 * PNG bytes of the merged image.
 */
export function mergePng(widths: Uint32Array, heights: Uint32Array, colors: Uint32Array): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly captionMetrics: (a: number, b: number) => [number, number, number, number];
    readonly fidExplorer: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number) => [number, number, number, number];
    readonly mergeLayout: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly mergePng: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
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
